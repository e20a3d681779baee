#include "anonact/manifest.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace anonact {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  std::ostringstream os;
  os << path << ":" << line << ": " << what;
  throw ManifestError(os.str());
}

Box parse_box(const json& j, const std::string& path, int line, const char* field) {
  if (!j.is_array() || j.size() != 4) fail(path, line, std::string(field) + ": box must be [x1,y1,x2,y2]");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2))
    fail(path, line, std::string(field) + ": non-finite box coordinate");
  if (!b.valid()) fail(path, line, std::string(field) + ": invalid box (requires x1 < x2 and y1 < y2)");
  return b;
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ManifestError(path + ": cannot open manifest");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(path, lineno, std::string("parse error: ") + e.what());
    }
    fn(j, lineno);
  }
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ManifestError(tmp + ": cannot open for writing");
    out << content;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ManifestError(path + ": rename failed");
}

}  // namespace

std::vector<FrameRecord> load_frames_manifest(const std::string& path) {
  std::vector<FrameRecord> out;
  for_each_line(path, [&](const json& j, int line) {
    try {
      FrameRecord r;
      r.image_ref = j.at("image").get<std::string>();
      for (const auto& a : j.at("actions")) {
        ActionInstance inst;
        inst.box = parse_box(a.at("box"), path, line, "action");
        inst.action_class = a.at("class").get<int>();
        if (inst.action_class < 0) fail(path, line, "action class must be non-negative");
        r.actions.push_back(inst);
      }
      if (j.contains("faces")) {
        for (const auto& f : j.at("faces")) {
          FaceDetection d;
          d.box = parse_box(f.at("box"), path, line, "face");
          d.score = f.at("score").get<double>();
          if (!std::isfinite(d.score)) fail(path, line, "face score must be finite");
          d.secondary_verified = f.value("verified", false);
          r.faces.push_back(d);
        }
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(path, line, std::string("schema error: ") + e.what());
    }
  });
  return out;
}

std::vector<FaceRecord> load_faces_manifest(const std::string& path) {
  std::vector<FaceRecord> out;
  for_each_line(path, [&](const json& j, int line) {
    try {
      FaceRecord r;
      r.image_ref = j.at("image").get<std::string>();
      r.identity = j.at("identity").get<int>();
      if (r.identity < 0) fail(path, line, "identity must be non-negative");
      r.align_box = parse_box(j.at("align_box"), path, line, "align_box");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(path, line, std::string("schema error: ") + e.what());
    }
  });
  return out;
}

std::vector<PairRecord> load_pairs_manifest(const std::string& path) {
  std::vector<PairRecord> out;
  for_each_line(path, [&](const json& j, int line) {
    try {
      PairRecord r;
      r.ref_a = j.at("a").get<std::string>();
      r.ref_b = j.at("b").get<std::string>();
      r.same = j.at("same").get<bool>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(path, line, std::string("schema error: ") + e.what());
    }
  });
  return out;
}

void save_frames_manifest(const std::string& path, const std::vector<FrameRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    json j;
    j["image"] = r.image_ref;
    j["actions"] = json::array();
    for (const auto& a : r.actions) j["actions"].push_back({{"box", box_json(a.box)}, {"class", a.action_class}});
    j["faces"] = json::array();
    for (const auto& f : r.faces)
      j["faces"].push_back({{"box", box_json(f.box)}, {"score", f.score}, {"verified", f.secondary_verified}});
    os << j.dump() << "\n";
  }
  atomic_write(path, os.str());
}

void save_faces_manifest(const std::string& path, const std::vector<FaceRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    json j;
    j["image"] = r.image_ref;
    j["identity"] = r.identity;
    j["align_box"] = box_json(r.align_box);
    os << j.dump() << "\n";
  }
  atomic_write(path, os.str());
}

void save_pairs_manifest(const std::string& path, const std::vector<PairRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    json j;
    j["a"] = r.ref_a;
    j["b"] = r.ref_b;
    j["same"] = r.same;
    os << j.dump() << "\n";
  }
  atomic_write(path, os.str());
}

int identity_count(const std::vector<FaceRecord>& records) {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.identity);
  return static_cast<int>(ids.size());
}

std::vector<FaceDetection> filter_face_detections(const std::vector<FaceDetection>& dets, double threshold) {
  if (threshold < 0.0 || threshold > 1.0) throw std::invalid_argument("filter_face_detections: threshold not in [0,1]");
  std::vector<FaceDetection> out;
  for (const auto& d : dets) {
    if (d.score > threshold || d.secondary_verified) out.push_back(d);
  }
  return out;
}

}  // namespace anonact
