#include "dilnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dilnet/errors.hpp"
#include "dilnet/rng.hpp"

namespace fs = std::filesystem;

namespace dilnet {

void ShapesSceneConfig::validate() const {
  if (num_classes < 2) throw ArgumentError("need background plus at least one foreground class");
  if (height < 16 || width < 16) throw ArgumentError("scene extent must be >= 16");
  if (shapes_min < 1 || shapes_max < shapes_min)
    throw ArgumentError("bad shapes-per-image range");
  if (kinds.empty()) throw ArgumentError("no shape kinds configured");
  if (noise < 0.0) throw ArgumentError("noise level must be >= 0");
}

namespace {

// Every shape shares the same interior color; only a thin outline ring is
// keyed to the class. A small window on the interior is therefore ambiguous,
// while a window wide enough to reach the ring (shapes max out near 30
// pixels) resolves the class. That is the context dependence the dataset is
// built to exercise.
constexpr double kBg[3] = {0.12, 0.15, 0.20};
constexpr double kInterior[3] = {0.82, 0.80, 0.78};
constexpr double kRing[3][3] = {
    {0.90, 0.35, 0.20},
    {0.20, 0.55, 0.90},
    {0.30, 0.85, 0.30},
};
constexpr int64_t kRingWidth = 2;

struct ShapeInst {
  ShapeKind kind;
  int32_t cls;
  int64_t cy, cx, size;
};

bool inside_sized(const ShapeInst& s, int64_t y, int64_t x, int64_t size) {
  const int64_t half = size / 2;
  switch (s.kind) {
    case ShapeKind::rectangle:
      return std::abs(y - s.cy) <= half && std::abs(x - s.cx) <= half;
    case ShapeKind::disk:
      return (y - s.cy) * (y - s.cy) + (x - s.cx) * (x - s.cx) <= half * half;
    case ShapeKind::triangle: {
      const int64_t top = s.cy - half;
      if (y < top || y > s.cy + half) return false;
      // width grows linearly from apex to base
      const int64_t allowed = ((y - top) * half) / std::max<int64_t>(1, size);
      return std::abs(x - s.cx) <= allowed;
    }
  }
  return false;
}

bool inside(const ShapeInst& s, int64_t y, int64_t x) { return inside_sized(s, y, x, s.size); }

bool on_ring(const ShapeInst& s, int64_t y, int64_t x) {
  return !inside_sized(s, y, x, s.size - 2 * kRingWidth);
}

}  // namespace

SynthSample generate_scene(const ShapesSceneConfig& cfg, uint64_t index) {
  cfg.validate();
  SplitMix64 rng(mix_seed(cfg.seed, index));

  SynthSample s;
  s.image = Tensor({1, 3, cfg.height, cfg.width});
  s.labels = LabelMap(1, cfg.height, cfg.width, 0);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < cfg.height; ++y) {
      float* row = s.image.row(0, c, y);
      for (int64_t x = 0; x < cfg.width; ++x) row[x] = static_cast<float>(kBg[c]);
    }

  const int64_t count =
      cfg.shapes_min + static_cast<int64_t>(rng.next_below(
                           static_cast<uint64_t>(cfg.shapes_max - cfg.shapes_min + 1)));
  const int64_t min_dim = std::min(cfg.height, cfg.width);
  const int64_t size_lo = std::max<int64_t>(8, min_dim / 5);
  const int64_t size_hi = std::max(size_lo + 1, (min_dim * 4) / 9);

  for (int64_t k = 0; k < count; ++k) {
    ShapeInst sh;
    sh.cls = 1 + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(cfg.num_classes - 1)));
    const size_t which = static_cast<size_t>(sh.cls - 1);
    sh.kind = cfg.kinds[which % cfg.kinds.size()];
    sh.size = size_lo + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(size_hi - size_lo)));
    sh.cy = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(cfg.height)));
    sh.cx = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(cfg.width)));

    const double* ring = kRing[which % 3];
    for (int64_t y = std::max<int64_t>(0, sh.cy - sh.size); y <= std::min(cfg.height - 1, sh.cy + sh.size); ++y)
      for (int64_t x = std::max<int64_t>(0, sh.cx - sh.size); x <= std::min(cfg.width - 1, sh.cx + sh.size); ++x) {
        if (!inside(sh, y, x)) continue;
        const double* color = on_ring(sh, y, x) ? ring : kInterior;
        for (int64_t c = 0; c < 3; ++c) s.image.at(0, c, y, x) = static_cast<float>(color[c]);
        s.labels.at(0, y, x) = sh.cls;
      }
  }

  if (cfg.noise > 0.0)
    for (auto& v : s.image.data) {
      double nv = static_cast<double>(v) + cfg.noise * rng.gauss();
      v = static_cast<float>(std::clamp(nv, 0.0, 1.0));
    }
  return s;
}

std::vector<SynthSample> generate(const ShapesSceneConfig& cfg, int64_t count) {
  std::vector<SynthSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(generate_scene(cfg, static_cast<uint64_t>(i)));
  return out;
}

namespace {

// PNM header tokenizer that tracks the byte offset for error reporting.
struct PnmReader {
  explicit PnmReader(const std::string& path) : path_(path), is_(path, std::ios::binary) {
    if (!is_) throw DataError("cannot open " + path);
  }

  int get() {
    int c = is_.get();
    if (c != EOF) ++offset_;
    return c;
  }

  std::string token() {
    int c = get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
      if (c == '#')
        while (c != EOF && c != '\n') c = get();
      c = get();
    }
    if (c == EOF) throw FormatError(path_ + ": truncated header", offset_);
    std::string t;
    while (c != EOF && !std::isspace(c)) {
      t.push_back(static_cast<char>(c));
      c = get();
    }
    return t;
  }

  int64_t int_token(const char* what) {
    std::string t = token();
    try {
      size_t pos = 0;
      int64_t v = std::stoll(t, &pos);
      if (pos != t.size() || v < 0) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw FormatError(path_ + ": bad " + what + " '" + t + "'", offset_);
    }
  }

  void payload(unsigned char* dst, size_t count) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count));
    if (static_cast<size_t>(is_.gcount()) != count)
      throw FormatError(path_ + ": truncated payload", offset_ + static_cast<size_t>(is_.gcount()));
    offset_ += count;
  }

  std::string path_;
  std::ifstream is_;
  size_t offset_ = 0;
};

unsigned char to_byte(float v) {
  double scaled = std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(scaled);
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.shape.n != 1 || image.shape.c != 3)
    throw ArgumentError("write_ppm expects a (1,3,h,w) tensor, got " + image.shape.str());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P6\n" << image.shape.w << " " << image.shape.h << "\n255\n";
  for (int64_t y = 0; y < image.shape.h; ++y)
    for (int64_t x = 0; x < image.shape.w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        os.put(static_cast<char>(to_byte(image.at(0, c, y, x))));
  if (!os) throw DataError("write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
  PnmReader r(path);
  std::string magic = r.token();
  if (magic != "P6") throw FormatError(path + ": expected P6, got '" + magic + "'", 0);
  int64_t w = r.int_token("width");
  int64_t h = r.int_token("height");
  int64_t maxval = r.int_token("maxval");
  if (maxval != 255) throw FormatError(path + ": maxval must be 255", r.offset_);
  if (w < 1 || h < 1) throw FormatError(path + ": bad extents", r.offset_);
  std::vector<unsigned char> buf(static_cast<size_t>(w * h * 3));
  r.payload(buf.data(), buf.size());
  Tensor t({1, 3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<float>(buf[(y * w + x) * 3 + c]) / 255.0f;
  return t;
}

void write_pgm(const std::string& path, const LabelMap& labels) {
  if (labels.n != 1) throw ArgumentError("write_pgm expects a single-image label map");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  for (int32_t v : labels.data) {
    if (v < 0 || v > 255) throw DataError("label " + std::to_string(v) + " not PGM-encodable");
    os.put(static_cast<char>(v));
  }
  if (!os) throw DataError("write failed for " + path);
}

LabelMap read_pgm(const std::string& path) {
  PnmReader r(path);
  std::string magic = r.token();
  if (magic != "P5") throw FormatError(path + ": expected P5, got '" + magic + "'", 0);
  int64_t w = r.int_token("width");
  int64_t h = r.int_token("height");
  int64_t maxval = r.int_token("maxval");
  if (maxval != 255) throw FormatError(path + ": maxval must be 255", r.offset_);
  if (w < 1 || h < 1) throw FormatError(path + ": bad extents", r.offset_);
  std::vector<unsigned char> buf(static_cast<size_t>(w * h));
  r.payload(buf.data(), buf.size());
  LabelMap m(1, h, w);
  for (size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i];
  return m;
}

ShapesSceneConfig parse_scene_config(const std::string& text) {
  ShapesSceneConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto strip = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r\n");
      if (b == std::string::npos) return std::string();
      size_t e = s.find_last_not_of(" \t\r\n");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("scene config: expected key=value, got: " + line);
    std::string key = strip(line.substr(0, eq)), val = strip(line.substr(eq + 1));
    auto to_int = [&](const std::string& v) {
      try {
        return std::stoll(v);
      } catch (const std::exception&) {
        throw DataError("scene config: bad value '" + v + "' for " + key);
      }
    };
    if (key == "height") cfg.height = to_int(val);
    else if (key == "width") cfg.width = to_int(val);
    else if (key == "size") cfg.height = cfg.width = to_int(val);
    else if (key == "classes") cfg.num_classes = to_int(val);
    else if (key == "shapes_min") cfg.shapes_min = to_int(val);
    else if (key == "shapes_max") cfg.shapes_max = to_int(val);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(to_int(val));
    else if (key == "noise") {
      try {
        cfg.noise = std::stod(val);
      } catch (const std::exception&) {
        throw DataError("scene config: bad value '" + val + "' for noise");
      }
    } else if (key == "kinds") {
      cfg.kinds.clear();
      std::istringstream ks(val);
      std::string kind;
      while (std::getline(ks, kind, ',')) {
        kind = strip(kind);
        if (kind == "rectangle") cfg.kinds.push_back(ShapeKind::rectangle);
        else if (kind == "disk") cfg.kinds.push_back(ShapeKind::disk);
        else if (kind == "triangle") cfg.kinds.push_back(ShapeKind::triangle);
        else throw DataError("scene config: unknown shape kind '" + kind + "'");
      }
    } else {
      throw DataError("scene config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ShapesSceneConfig load_scene_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_scene_config(buf.str());
}

namespace {

std::string sample_name(int64_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.%s", static_cast<long long>(i), ext);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const ShapesSceneConfig& cfg, int64_t count) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw DataError("cannot write manifest in " + dir);
  for (int64_t i = 0; i < count; ++i) {
    SynthSample s = generate_scene(cfg, static_cast<uint64_t>(i));
    const std::string img = "images/" + sample_name(i, "ppm");
    const std::string lab = "labels/" + sample_name(i, "pgm");
    write_ppm((fs::path(dir) / img).string(), s.image);
    write_pgm((fs::path(dir) / lab).string(), s.labels);
    manifest << img << " " << lab << "\n";
  }
  if (!manifest) throw DataError("write failed for manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw DataError("cannot open manifest.txt in " + dir);
  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string img, lab;
    if (!(ls >> img)) continue;
    if (!(ls >> lab)) throw DataError("manifest line missing label path: " + line);
    ds.images.push_back(read_ppm((fs::path(dir) / img).string()));
    ds.labels.push_back(read_pgm((fs::path(dir) / lab).string()));
  }
  return ds;
}

}  // namespace dilnet
