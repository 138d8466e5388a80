#include "semiseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace semiseg {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (height < 16 || width < 16)
    throw std::invalid_argument("SceneConfig: canvas must be at least 16x16");
  if (shapes_min < 0 || shapes_max < shapes_min)
    throw std::invalid_argument("SceneConfig: invalid shape count range");
  if (fg_min < 0 || fg_max <= fg_min || fg_max > 1)
    throw std::invalid_argument("SceneConfig: invalid foreground bounds");
  if (num_classes < 2) throw std::invalid_argument("SceneConfig: num_classes must be >= 2");
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double dist_to_segment(double py, double px, double ay, double ax, double by, double bx) {
  const double dy = by - ay, dx = bx - ax;
  const double len2 = dy * dy + dx * dx;
  double t = len2 > 0 ? ((py - ay) * dy + (px - ax) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cy = ay + t * dy, cx = ax + t * dx;
  return std::hypot(py - cy, px - cx);
}

struct Capsule {
  double ay, ax, by, bx, radius;
};

Capsule random_capsule(Rng& rng, int h, int w, double len_lo, double len_hi, double rad_lo,
                       double rad_hi) {
  const double base = std::min(h, w);
  const double cy = uniform_real(rng, 0.2 * h, 0.8 * h);
  const double cx = uniform_real(rng, 0.2 * w, 0.8 * w);
  const double angle = uniform_real(rng, 0.0, 3.141592653589793);
  const double half_len = uniform_real(rng, len_lo, len_hi) * base * 0.5;
  Capsule c;
  c.ay = cy - half_len * std::sin(angle);
  c.ax = cx - half_len * std::cos(angle);
  c.by = cy + half_len * std::sin(angle);
  c.bx = cx + half_len * std::cos(angle);
  c.radius = uniform_real(rng, rad_lo, rad_hi) * base;
  return c;
}

template <typename S>
void render(Rng& rng, const SceneConfig& cfg, Tensor<S>& img, SegMask& mask) {
  const int h = cfg.height, w = cfg.width;
  img = Tensor<S>(3, h, w);
  mask = SegMask(h, w, cfg.num_classes);

  // background: base tint + directional shading + smooth coarse-grid texture
  double base[3];
  for (double& b : base) b = uniform_real(rng, 0.15, 0.6);
  const double grad_angle = uniform_real(rng, 0.0, 6.283185307179586);
  const double grad_amp = uniform_real(rng, 0.0, 0.25);
  const double gy = std::sin(grad_angle), gx = std::cos(grad_angle);

  const int grid = 5;
  std::vector<double> tex_shared((grid + 1) * (grid + 1));
  std::vector<double> tex_ch(3 * (grid + 1) * (grid + 1));
  for (double& v : tex_shared) v = uniform_real(rng, -1.0, 1.0);
  for (double& v : tex_ch) v = uniform_real(rng, -1.0, 1.0);
  auto tex_at = [&](int ci, double y, double x) {
    const double fy = y / (h - 1.0) * grid, fx = x / (w - 1.0) * grid;
    const int y0 = std::min(static_cast<int>(fy), grid - 1);
    const int x0 = std::min(static_cast<int>(fx), grid - 1);
    const double dy = fy - y0, dx = fx - x0;
    auto cell = [&](const std::vector<double>& t, int off, int yy, int xx) {
      return t[off + yy * (grid + 1) + xx];
    };
    auto lerp2 = [&](const std::vector<double>& t, int off) {
      return (1 - dy) * ((1 - dx) * cell(t, off, y0, x0) + dx * cell(t, off, y0, x0 + 1)) +
             dy * ((1 - dx) * cell(t, off, y0 + 1, x0) + dx * cell(t, off, y0 + 1, x0 + 1));
    };
    return 0.7 * lerp2(tex_shared, 0) + 0.3 * lerp2(tex_ch, ci * (grid + 1) * (grid + 1));
  };

  for (int ci = 0; ci < 3; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double proj = (gy * y / (h - 1.0) + gx * x / (w - 1.0)) * 0.5;
        const double v =
            base[ci] + grad_amp * proj + cfg.texture_amplitude * tex_at(ci, y, x);
        img.at(ci, y, x) = static_cast<S>(clamp01(v));
      }

  // instruments: shaded capsules, drawn with a 1px anti-aliased edge in the
  // image; hard boundary (distance <= radius) in the label map
  const int n_shapes = (cfg.shapes_max == 0)
                           ? 0
                           : uniform_int(rng, cfg.shapes_min, cfg.shapes_max);
  for (int si = 0; si < n_shapes; ++si) {
    const Capsule c = random_capsule(rng, h, w, 0.35, 0.85, 0.05, 0.11);
    double col[3];
    const double gray = uniform_real(rng, 0.35, 0.95);
    for (double& v : col) v = clamp01(gray + uniform_real(rng, -0.08, 0.08));
    const double shade = uniform_real(rng, 0.1, 0.3);
    const bool with_highlight = canonical(rng) < 0.6;
    const double hl_offset = uniform_real(rng, -0.4, 0.4);

    const double dy = c.by - c.ay, dx = c.bx - c.ax;
    const double len = std::max(1e-9, std::hypot(dy, dx));
    const double ny = -dx / len, nx = dy / len;  // unit normal

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d = dist_to_segment(y, x, c.ay, c.ax, c.by, c.bx);
        if (d > c.radius + 1.0) continue;
        const double perp = (y - c.ay) * ny + (x - c.ax) * nx;
        const double alpha = clamp01(c.radius - d + 0.5);
        double highlight = 0.0;
        if (with_highlight && std::abs(perp - hl_offset * c.radius) < 0.25 * c.radius)
          highlight = 0.35;
        for (int ci = 0; ci < 3; ++ci) {
          const double shaded =
              clamp01(col[ci] + shade * perp / c.radius + highlight);
          const double cur = img.at(ci, y, x);
          img.at(ci, y, x) = static_cast<S>(cur + alpha * (shaded - cur));
        }
        if (d <= c.radius) mask.at(y, x) = 1;
      }
  }

  // background reflection streaks: bright, thin, labelled as background
  if (canonical(rng) < cfg.specular_prob) {
    const int n_streaks = uniform_int(rng, 1, 2);
    for (int si = 0; si < n_streaks; ++si) {
      const Capsule c = random_capsule(rng, h, w, 0.15, 0.45, 0.012, 0.03);
      const double bright = uniform_real(rng, 0.85, 1.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d = dist_to_segment(y, x, c.ay, c.ax, c.by, c.bx);
          if (d > c.radius + 1.0) continue;
          if (mask.at(y, x) != 0) continue;  // never overwrite instruments
          const double alpha = clamp01(c.radius - d + 0.5);
          for (int ci = 0; ci < 3; ++ci) {
            const double cur = img.at(ci, y, x);
            img.at(ci, y, x) = static_cast<S>(cur + alpha * (bright - cur));
          }
        }
    }
  }
}

}  // namespace

template <typename S>
LabelledItem<S> generate_scene(uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng(splitmix64(seed ^ (0x5151515151515151ULL * (attempt + 1))));
    Tensor<S> img;
    SegMask mask;
    render(rng, cfg, img, mask);
    if (cfg.shapes_max == 0) return {std::move(img), std::move(mask)};
    const double frac =
        static_cast<double>(mask.foreground_count()) / static_cast<double>(mask.labels.size());
    if (frac >= cfg.fg_min && frac <= cfg.fg_max) return {std::move(img), std::move(mask)};
  }
  throw std::runtime_error(
      "generate_scene: foreground bounds not reachable with this scene config");
}

template <typename S>
std::vector<LabelledItem<S>> generate_pool(int count, uint64_t seed, const SceneConfig& cfg) {
  if (count <= 0) throw std::invalid_argument("generate_pool: count must be > 0");
  std::vector<LabelledItem<S>> pool;
  pool.reserve(count);
  for (int i = 0; i < count; ++i)
    pool.push_back(generate_scene<S>(seed + static_cast<uint64_t>(i), cfg));
  return pool;
}

template <typename S>
DatasetSplit<S> make_splits(const std::vector<LabelledItem<S>>& pool, double ratio,
                            uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("make_splits: empty pool");
  if (ratio <= 0.0 || ratio > 1.0)
    throw std::invalid_argument("make_splits: ratio must be in (0, 1]");
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  for (size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[uniform_int(rng, 0, static_cast<int>(i))]);

  const size_t n_lab = static_cast<size_t>(ratio * static_cast<double>(pool.size()));
  DatasetSplit<S> split;
  split.ratio = ratio;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < n_lab)
      split.labelled.push_back(pool[order[i]]);
    else
      split.unlabelled.push_back(pool[order[i]].first);
  }
  return split;
}

template <typename S>
BatchSampler<S>::BatchSampler(const DatasetSplit<S>* split, bool use_unlabelled)
    : split_(split), use_unlabelled_(use_unlabelled) {
  if (split_->labelled.empty()) throw std::invalid_argument("BatchSampler: no labelled items");
  if (use_unlabelled_ && split_->unlabelled.empty())
    throw std::invalid_argument("BatchSampler: no unlabelled items in semi-supervised mode");
}

template <typename S>
void BatchSampler<S>::start_epoch(Rng& rng) {
  auto shuffle = [&rng](std::vector<int>& order, size_t n) {
    order.resize(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    for (size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[uniform_int(rng, 0, static_cast<int>(i))]);
  };
  shuffle(lab_order_, split_->labelled.size());
  lab_pos_ = 0;
  if (use_unlabelled_) {
    shuffle(unlab_order_, split_->unlabelled.size());
    unlab_pos_ = 0;
  }
}

template <typename S>
MixedBatch<S> BatchSampler<S>::next(int batch_size, Rng& rng) {
  if (batch_size <= 0) throw std::invalid_argument("next_batch: batch size must be > 0");
  if (lab_order_.empty()) start_epoch(rng);
  MixedBatch<S> batch;
  for (int i = 0; i < batch_size; ++i) {
    int idx;
    if (lab_pos_ < lab_order_.size())
      idx = lab_order_[lab_pos_++];
    else
      idx = uniform_int(rng, 0, static_cast<int>(split_->labelled.size()) - 1);
    batch.labelled_items.push_back(split_->labelled[idx]);
  }
  if (use_unlabelled_)
    for (int i = 0; i < batch_size; ++i) {
      int idx;
      if (unlab_pos_ < unlab_order_.size())
        idx = unlab_order_[unlab_pos_++];
      else
        idx = uniform_int(rng, 0, static_cast<int>(split_->unlabelled.size()) - 1);
      batch.unlabelled_items.push_back(split_->unlabelled[idx]);
    }
  return batch;
}

template <typename S>
int BatchSampler<S>::steps_per_epoch(int batch_size) const {
  // The larger set drives the epoch regardless of mode, so supervised-only
  // and semi-supervised runs on the same split see the same update count.
  const size_t driver = std::max(split_->labelled.size(), split_->unlabelled.size());
  return static_cast<int>((driver + batch_size - 1) / batch_size);
}

template <typename S>
MixedBatch<S> next_batch(const DatasetSplit<S>& split, int batch_size, Rng& rng) {
  BatchSampler<S> sampler(&split, !split.unlabelled.empty());
  sampler.start_epoch(rng);
  return sampler.next(batch_size, rng);
}

// ---------------------------------------------------------------------------
// PPM/PGM dataset directories
// ---------------------------------------------------------------------------

namespace {

void expect(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

std::string stem_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05d", index);
  return buf;
}

void read_pnm_header(std::ifstream& in, const std::string& magic, const fs::path& path, int& w,
                     int& h) {
  std::string tag;
  in >> tag;
  expect(tag == magic, path.string() + ": expected " + magic + " raster file");
  int maxval;
  in >> w >> h >> maxval;
  expect(in.good() && w > 0 && h > 0, path.string() + ": malformed header");
  expect(maxval == 255, path.string() + ": only maxval 255 is supported");
  in.get();  // single whitespace before binary payload
}

}  // namespace

template <typename S>
void write_ppm(const fs::path& path, const Tensor<S>& image) {
  expect(image.c == 3, "write_ppm: expected a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  expect(out.good(), "write_ppm: cannot open " + path.string());
  out << "P6\n" << image.w << " " << image.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(image.w) * 3);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x)
      for (int ci = 0; ci < 3; ++ci)
        row[static_cast<size_t>(x) * 3 + ci] = static_cast<unsigned char>(
            std::lround(clamp01(static_cast<double>(image.at(ci, y, x))) * 255.0));
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  expect(out.good(), "write_ppm: write failed for " + path.string());
}

template <typename S>
Tensor<S> read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  expect(in.good(), "read_ppm: cannot open " + path.string());
  int w, h;
  read_pnm_header(in, "P6", path, w, h);
  Tensor<S> img(3, h, w);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    expect(in.good(), "read_ppm: truncated file " + path.string());
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < 3; ++ci)
        img.at(ci, y, x) = static_cast<S>(row[static_cast<size_t>(x) * 3 + ci] / 255.0);
  }
  return img;
}

void write_pgm(const fs::path& path, const SegMask& mask) {
  std::ofstream out(path, std::ios::binary);
  expect(out.good(), "write_pgm: cannot open " + path.string());
  out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
  std::vector<unsigned char> row(mask.w);
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) row[x] = static_cast<unsigned char>(mask.at(y, x));
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  expect(out.good(), "write_pgm: write failed for " + path.string());
}

SegMask read_pgm(const fs::path& path, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  expect(in.good(), "read_pgm: cannot open " + path.string());
  int w, h;
  read_pnm_header(in, "P5", path, w, h);
  SegMask mask(h, w, num_classes);
  std::vector<unsigned char> row(w);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    expect(in.good(), "read_pgm: truncated file " + path.string());
    for (int x = 0; x < w; ++x) mask.at(y, x) = row[x];
  }
  mask.validate();
  return mask;
}

template <typename S>
void save_directory(const fs::path& dir, const std::vector<LabelledItem<S>>& items) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (size_t i = 0; i < items.size(); ++i) {
    const std::string stem = stem_name(static_cast<int>(i));
    write_ppm(dir / "images" / (stem + ".ppm"), items[i].first);
    write_pgm(dir / "masks" / (stem + ".pgm"), items[i].second);
  }
}

template <typename S>
std::vector<std::pair<Tensor<S>, std::optional<SegMask>>> load_directory(const fs::path& dir,
                                                                         int num_classes) {
  const fs::path img_dir = dir / "images";
  expect(fs::is_directory(img_dir), "load_directory: missing images/ under " + dir.string());
  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(img_dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") image_files.push_back(e.path());
  std::sort(image_files.begin(), image_files.end());
  expect(!image_files.empty(), "load_directory: no .ppm images in " + img_dir.string());

  std::vector<std::pair<Tensor<S>, std::optional<SegMask>>> items;
  items.reserve(image_files.size());
  for (const auto& img_path : image_files) {
    Tensor<S> img = read_ppm<S>(img_path);
    std::optional<SegMask> mask;
    const fs::path mask_path = dir / "masks" / (img_path.stem().string() + ".pgm");
    if (fs::exists(mask_path)) {
      SegMask m = read_pgm(mask_path, num_classes);
      expect(m.h == img.h && m.w == img.w,
             "load_directory: image/mask shape mismatch for " + img_path.stem().string());
      mask = std::move(m);
    }
    items.emplace_back(std::move(img), std::move(mask));
  }
  return items;
}

#define SEMISEG_INSTANTIATE(S)                                                                \
  template LabelledItem<S> generate_scene<S>(uint64_t, const SceneConfig&);                   \
  template std::vector<LabelledItem<S>> generate_pool<S>(int, uint64_t, const SceneConfig&);  \
  template DatasetSplit<S> make_splits<S>(const std::vector<LabelledItem<S>>&, double,        \
                                          uint64_t);                                          \
  template class BatchSampler<S>;                                                             \
  template MixedBatch<S> next_batch<S>(const DatasetSplit<S>&, int, Rng&);                    \
  template void save_directory<S>(const fs::path&, const std::vector<LabelledItem<S>>&);      \
  template std::vector<std::pair<Tensor<S>, std::optional<SegMask>>> load_directory<S>(       \
      const fs::path&, int);                                                                  \
  template void write_ppm<S>(const fs::path&, const Tensor<S>&);                              \
  template Tensor<S> read_ppm<S>(const fs::path&);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg
