#include "anonact/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "anonact/image_ops.hpp"
#include "anonact/ppm_io.hpp"

namespace anonact {

namespace {

struct Color {
  double r, g, b;
};

Color hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

struct IdentityTraits {
  Color face, hair;
  double eye_span;   // fraction of face width between the eyes
  double mouth_w;    // mouth width fraction
};

IdentityTraits identity_traits(const SyntheticSpec& spec, int id) {
  Rng rng(spec.seed ^ (0x51ed2701ULL + 7919ULL * static_cast<std::uint64_t>(id)));
  IdentityTraits t;
  // evenly spaced hues keep identities separable by mean color
  const double hue = (static_cast<double>(id) + 0.5 * rng.uniform()) / spec.n_identities;
  t.face = hsv(hue, 0.55 + 0.25 * rng.uniform(), 0.70 + 0.22 * rng.uniform());
  t.hair = hsv(hue + 0.45 + 0.1 * rng.uniform(), 0.6, 0.25 + 0.3 * rng.uniform());
  t.eye_span = 0.32 + 0.14 * rng.uniform();
  t.mouth_w = 0.3 + 0.25 * rng.uniform();
  return t;
}

void fill_rect(ImageBuffer& img, int y0, int x0, int y1, int x1, const Color& c) {
  y0 = std::max(0, y0);
  x0 = std::max(0, x0);
  y1 = std::min(img.height(), y1);
  x1 = std::min(img.width(), x1);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      img.at(y, x, 0) = c.r;
      img.at(y, x, 1) = c.g;
      img.at(y, x, 2) = c.b;
    }
}

void draw_face_into(ImageBuffer& img, int y0, int x0, int size, const IdentityTraits& t, Rng& rng) {
  const double bright = 0.9 + 0.2 * rng.uniform();
  const double jx = rng.uniform(-1.5, 1.5) * size / 32.0;
  const double jy = rng.uniform(-1.5, 1.5) * size / 32.0;
  const double cx = x0 + 0.5 * size + jx;
  const double cy = y0 + 0.55 * size + jy;
  const double rx = (0.36 + 0.04 * rng.uniform()) * size;
  const double ry = (0.42 + 0.04 * rng.uniform()) * size;
  const Color face{std::min(1.0, t.face.r * bright), std::min(1.0, t.face.g * bright), std::min(1.0, t.face.b * bright)};
  // face oval
  for (int y = std::max(0, y0); y < std::min(img.height(), y0 + size); ++y) {
    for (int x = std::max(0, x0); x < std::min(img.width(), x0 + size); ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) {
        img.at(y, x, 0) = face.r;
        img.at(y, x, 1) = face.g;
        img.at(y, x, 2) = face.b;
      }
    }
  }
  // hair band over the top of the oval
  const int hair_h = std::max(1, static_cast<int>(0.18 * size));
  for (int y = std::max(0, static_cast<int>(cy - ry)); y < std::min(img.height(), static_cast<int>(cy - ry) + hair_h);
       ++y) {
    for (int x = std::max(0, x0); x < std::min(img.width(), x0 + size); ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy <= 1.05) {
        img.at(y, x, 0) = t.hair.r;
        img.at(y, x, 1) = t.hair.g;
        img.at(y, x, 2) = t.hair.b;
      }
    }
  }
  // eyes and mouth
  const Color dark{0.06, 0.06, 0.08};
  const int es = std::max(1, static_cast<int>(0.09 * size));
  const int ey = static_cast<int>(cy - 0.12 * size);
  const int off = static_cast<int>(0.5 * t.eye_span * size);
  fill_rect(img, ey, static_cast<int>(cx) - off - es / 2, ey + es, static_cast<int>(cx) - off + (es + 1) / 2, dark);
  fill_rect(img, ey, static_cast<int>(cx) + off - es / 2, ey + es, static_cast<int>(cx) + off + (es + 1) / 2, dark);
  const int mw = static_cast<int>(t.mouth_w * size * 0.5);
  const int my = static_cast<int>(cy + 0.22 * size);
  fill_rect(img, my, static_cast<int>(cx) - mw, my + std::max(1, size / 16), static_cast<int>(cx) + mw, dark);
}

void add_noise(ImageBuffer& img, double sd, Rng& rng) {
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) += rng.normal(0.0, sd);
  img.clamp01();
}

// class pattern drawn over a face rectangle; this is the only class evidence
void draw_action_pattern(ImageBuffer& img, int y0, int x0, int size, int action_class) {
  const Color dark{0.05, 0.05, 0.05};
  const int th = std::max(1, size / 8);
  if (action_class % 3 == 0) {  // horizontal stripes
    fill_rect(img, y0 + static_cast<int>(0.28 * size), x0, y0 + static_cast<int>(0.28 * size) + th, x0 + size, dark);
    fill_rect(img, y0 + static_cast<int>(0.62 * size), x0, y0 + static_cast<int>(0.62 * size) + th, x0 + size, dark);
  } else if (action_class % 3 == 1) {  // vertical stripes
    fill_rect(img, y0, x0 + static_cast<int>(0.28 * size), y0 + size, x0 + static_cast<int>(0.28 * size) + th, dark);
    fill_rect(img, y0, x0 + static_cast<int>(0.62 * size), y0 + size, x0 + static_cast<int>(0.62 * size) + th, dark);
  } else {  // border ring
    fill_rect(img, y0, x0, y0 + th, x0 + size, dark);
    fill_rect(img, y0 + size - th, x0, y0 + size, x0 + size, dark);
    fill_rect(img, y0, x0, y0 + size, x0 + th, dark);
    fill_rect(img, y0, x0 + size - th, y0 + size, x0 + size, dark);
  }
}

}  // namespace

ImageBuffer render_face(const SyntheticSpec& spec, int identity, Rng& rng) {
  const int s = spec.face_image_size;
  ImageBuffer img(s, s);
  const double bg = 0.78 + 0.08 * rng.uniform();
  const double tint = 0.04 * rng.uniform();
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      img.at(y, x, 0) = bg;
      img.at(y, x, 1) = bg - tint;
      img.at(y, x, 2) = bg - 0.5 * tint;
    }
  draw_face_into(img, 0, 0, s, identity_traits(spec, identity), rng);
  add_noise(img, 0.01, rng);
  return img;
}

SyntheticPaths make_synthetic(const std::string& out_dir, const SyntheticSpec& spec) {
  if (spec.n_identities < 2) throw std::invalid_argument("synthetic: need at least two identities");
  if (spec.n_frames < 1) throw std::invalid_argument("synthetic: need at least one frame");
  if (spec.n_classes < 1) throw std::invalid_argument("synthetic: need at least one action class");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/faces");
  fs::create_directories(out_dir + "/frames");

  Rng master(spec.seed);

  // ---- face images ----
  std::vector<FaceRecord> faces;
  for (int i = 0; i < spec.n_faces; ++i) {
    const int id = i % spec.n_identities;
    Rng sample = master.split(static_cast<std::uint64_t>(i));
    ImageBuffer img = render_face(spec, id, sample);
    char name[64];
    std::snprintf(name, sizeof(name), "faces/face_%03d_%04d.ppm", id, i);
    save_image(out_dir + "/" + name, img);
    FaceRecord rec;
    rec.image_ref = name;
    rec.identity = id;
    rec.align_box = {0.0, 0.0, static_cast<double>(spec.face_image_size), static_cast<double>(spec.face_image_size)};
    faces.push_back(rec);
  }

  // ---- frames ----
  std::vector<FrameRecord> frames;
  Rng frng = master.split(0xf7a3e5);
  for (int i = 0; i < spec.n_frames; ++i) {
    const int F = spec.frame_size;
    ImageBuffer img(F, F);
    // muted gradient background
    const double h0 = frng.uniform(), h1 = frng.uniform();
    const Color top = hsv(h0, 0.15, 0.45 + 0.2 * frng.uniform());
    const Color bot = hsv(h1, 0.15, 0.45 + 0.2 * frng.uniform());
    for (int y = 0; y < F; ++y) {
      const double a = static_cast<double>(y) / (F - 1);
      for (int x = 0; x < F; ++x) {
        img.at(y, x, 0) = top.r + a * (bot.r - top.r);
        img.at(y, x, 1) = top.g + a * (bot.g - top.g);
        img.at(y, x, 2) = top.b + a * (bot.b - top.b);
      }
    }
    // a couple of muted distractor rectangles
    for (int dscnt = 0; dscnt < 2; ++dscnt) {
      const int dw = static_cast<int>(frng.uniform(8, 18)), dh = static_cast<int>(frng.uniform(8, 18));
      const int dx = static_cast<int>(frng.uniform(0, F - dw)), dy = static_cast<int>(frng.uniform(0, F - dh));
      fill_rect(img, dy, dx, dy + dh, dx + dw, hsv(frng.uniform(), 0.2, 0.5));
    }

    FrameRecord rec;
    const int n_people = 1 + static_cast<int>(frng.randint(2));
    for (int p = 0; p < n_people; ++p) {
      const int pw = static_cast<int>(frng.uniform(26, 34));
      const int ph = static_cast<int>(pw * frng.uniform(1.35, 1.6));
      const int px = static_cast<int>(frng.uniform(2, F - pw - 2));
      const int py = static_cast<int>(frng.uniform(2, F - ph - 2));
      const int cls = static_cast<int>(frng.randint(spec.n_classes));
      const int id = static_cast<int>(frng.randint(spec.n_identities));

      // body: muted shirt, identity-independent
      const int fsz = std::max(8, static_cast<int>(0.62 * pw));
      const int fx = px + (pw - fsz) / 2;
      const int fy = py;
      fill_rect(img, fy + fsz, px + pw / 10, py + ph, px + pw - pw / 10, hsv(frng.uniform(), 0.35, 0.5));
      // face patch with identity appearance
      Rng sample = frng.split(static_cast<std::uint64_t>(1000 + p));
      draw_face_into(img, fy, fx, fsz, identity_traits(spec, id), sample);
      // class evidence lives on the face region
      draw_action_pattern(img, fy, fx, fsz, cls);

      ActionInstance act;
      act.box = {static_cast<double>(px), static_cast<double>(py), static_cast<double>(px + pw),
                 static_cast<double>(py + ph)};
      act.action_class = cls;
      rec.actions.push_back(act);

      FaceDetection det;
      const double jx = frng.uniform(-1.0, 1.0), jy = frng.uniform(-1.0, 1.0);
      Box fb{fx + jx, fy + jy, fx + fsz + jx, fy + fsz + jy};
      det.box = clip_box(fb, F, F);
      const double u = frng.uniform();
      if (u < 0.85) {
        det.score = 0.82 + 0.17 * frng.uniform();
        det.secondary_verified = false;
      } else if (u < 0.95) {
        det.score = 0.5 + 0.3 * frng.uniform();
        det.secondary_verified = true;
      } else {
        det.score = 0.5 + 0.3 * frng.uniform();
        det.secondary_verified = false;  // dropped by the cascade
      }
      rec.faces.push_back(det);
    }
    add_noise(img, 0.01, frng);
    char name[64];
    std::snprintf(name, sizeof(name), "frames/frame_%04d.ppm", i);
    save_image(out_dir + "/" + name, img);
    rec.image_ref = name;
    frames.push_back(rec);
  }

  // ---- pairs (reference existing face files) ----
  std::vector<std::vector<int>> by_id(static_cast<std::size_t>(spec.n_identities));
  for (std::size_t i = 0; i < faces.size(); ++i) by_id[static_cast<std::size_t>(faces[i].identity)].push_back(static_cast<int>(i));
  std::vector<PairRecord> pairs;
  Rng prng = master.split(0x9a11c3);
  const int half = std::max(1, spec.n_pairs / 2);
  for (int i = 0; i < half; ++i) {
    // positive
    int id = static_cast<int>(prng.randint(spec.n_identities));
    while (by_id[static_cast<std::size_t>(id)].size() < 2) id = (id + 1) % spec.n_identities;
    const auto& members = by_id[static_cast<std::size_t>(id)];
    const int a = members[static_cast<std::size_t>(prng.randint(static_cast<std::int64_t>(members.size())))];
    int b = a;
    while (b == a) b = members[static_cast<std::size_t>(prng.randint(static_cast<std::int64_t>(members.size())))];
    pairs.push_back({faces[static_cast<std::size_t>(a)].image_ref, faces[static_cast<std::size_t>(b)].image_ref, true});
    // negative
    int id2 = static_cast<int>(prng.randint(spec.n_identities));
    while (id2 == id) id2 = static_cast<int>(prng.randint(spec.n_identities));
    const auto& m2 = by_id[static_cast<std::size_t>(id2)];
    const int c = m2[static_cast<std::size_t>(prng.randint(static_cast<std::int64_t>(m2.size())))];
    pairs.push_back({faces[static_cast<std::size_t>(a)].image_ref, faces[static_cast<std::size_t>(c)].image_ref, false});
  }

  // ---- split & write manifests ----
  const int n_eval = std::max(1, static_cast<int>(std::lround(spec.n_frames * spec.eval_fraction)));
  std::vector<FrameRecord> train(frames.begin(), frames.end() - n_eval);
  std::vector<FrameRecord> eval(frames.end() - n_eval, frames.end());
  if (train.empty()) train = eval;

  SyntheticPaths paths;
  paths.faces_manifest = out_dir + "/faces.jsonl";
  paths.frames_train_manifest = out_dir + "/frames_train.jsonl";
  paths.frames_eval_manifest = out_dir + "/frames_eval.jsonl";
  paths.pairs_manifest = out_dir + "/pairs.jsonl";
  save_faces_manifest(paths.faces_manifest, faces);
  save_frames_manifest(paths.frames_train_manifest, train);
  save_frames_manifest(paths.frames_eval_manifest, eval);
  save_pairs_manifest(paths.pairs_manifest, pairs);
  return paths;
}

}  // namespace anonact
