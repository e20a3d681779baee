#pragma once

#include <string>
#include <vector>

#include "anonact/image.hpp"

namespace anonact {

// Raised for unreadable/malformed/invalid manifest content; message carries
// the file and line number.
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FaceDetection {
  Box box;
  double score = 0.0;
  bool secondary_verified = false;
};

struct ActionInstance {
  Box box;
  int action_class = 0;
};

struct FrameRecord {
  std::string image_ref;
  std::vector<ActionInstance> actions;
  std::vector<FaceDetection> faces;
};

struct FaceRecord {
  std::string image_ref;
  int identity = 0;
  Box align_box;
};

struct PairRecord {
  std::string ref_a;
  std::string ref_b;
  bool same = false;
};

// Line-delimited JSON manifests. Image files are not opened here.
std::vector<FrameRecord> load_frames_manifest(const std::string& path);
std::vector<FaceRecord> load_faces_manifest(const std::string& path);
std::vector<PairRecord> load_pairs_manifest(const std::string& path);

void save_frames_manifest(const std::string& path, const std::vector<FrameRecord>& records);
void save_faces_manifest(const std::string& path, const std::vector<FaceRecord>& records);
void save_pairs_manifest(const std::string& path, const std::vector<PairRecord>& records);

int identity_count(const std::vector<FaceRecord>& records);

// Cascade filtering: keep detections with score > threshold, plus detections
// at or below the threshold that passed the secondary verifier. Order
// preserved; idempotent.
std::vector<FaceDetection> filter_face_detections(const std::vector<FaceDetection>& dets, double threshold = 0.8);

}  // namespace anonact
