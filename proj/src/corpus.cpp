#include "mpma/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mpma {

namespace {

const std::vector<std::string> kShapes = {"rectangle", "disc", "cross", "ring"};
const std::vector<std::string> kSizes = {"small", "medium", "large"};  // rendered, not reported
const std::vector<std::string> kBright = {"dim", "bright"};
const std::vector<std::string> kRows = {"upper", "lower"};
const std::vector<std::string> kCols = {"left", "right"};

constexpr char kImageMagic[4] = {'M', 'P', 'M', 'C'};
constexpr std::uint32_t kImageVersion = 1;

double glyph_radius(std::size_t size_cls, std::size_t extent, std::size_t shape) {
  const double frac[3] = {0.14, 0.18, 0.22};
  // Per-shape factors equalize covered area across shapes at equal size class,
  // so total glyph mass is not a linear shortcut for classifying shape.
  const double area_eq[4] = {0.96, 0.84, 1.0, 1.13};
  return std::max(1.0, frac[size_cls] * area_eq[shape] * double(extent));
}

template <class T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

const std::vector<std::string>& shape_names() { return kShapes; }

Scene sample_scene(const SyntheticWorld& world, std::size_t index) {
  SplitMix64 rng(mix_seed(world.seed, index));
  Scene s;
  // Glyph class comes from a shuffled urn over blocks of four scenes, so
  // every corpus prefix stays close to class-uniform; the remaining scene
  // attributes are drawn iid from the per-scene stream.
  const std::size_t n_shapes = kShapes.size();
  SplitMix64 urn(mix_seed(world.seed, 0x55524eull, index / n_shapes));
  std::vector<std::size_t> perm(n_shapes);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n_shapes - 1; i > 0; --i) std::swap(perm[i], perm[urn.below(i + 1)]);
  s.shape = perm[index % n_shapes];
  s.size_cls = rng.below(kSizes.size());
  s.bright = rng.below(kBright.size());
  s.region = rng.below(4);
  const double r = glyph_radius(s.size_cls, std::min(world.height, world.width), s.shape);
  const std::size_t row = s.region / 2, col = s.region % 2;
  const double base_cy = double(world.height) * (1.0 + 2.0 * double(row)) / 4.0;
  const double base_cx = double(world.width) * (1.0 + 2.0 * double(col)) / 4.0;
  const double jit = double(std::min(world.height, world.width)) / 12.0;
  s.cy = std::clamp(base_cy + (rng.real() * 2.0 - 1.0) * jit, r, double(world.height) - 1.0 - r);
  s.cx = std::clamp(base_cx + (rng.real() * 2.0 - 1.0) * jit, r, double(world.width) - 1.0 - r);
  s.theta = rng.real() * 3.14159265358979323846;
  s.noise_seed = rng.next();
  return s;
}

std::vector<float> render_scene(const SyntheticWorld& world, const Scene& scene) {
  const std::size_t H = world.height, W = world.width, C = world.channels;
  const double r = glyph_radius(scene.size_cls, std::min(H, W), scene.shape);
  const double bar = std::max(1.0, r / 3.0);       // cross arm / ring wall thickness
  const double r_in = std::max(0.0, r - bar);      // ring inner radius
  const double delta = scene.bright ? 0.34 : 0.17;
  SplitMix64 noise(scene.noise_seed);
  // Per-scene nuisance: random base level and an oriented linear ramp, so
  // pooled intensity statistics carry little class information and an
  // untrained encoder stays near chance on glyph classification.
  const double base = 0.18 + 0.24 * noise.real();
  const double slope = -0.22 + 0.44 * noise.real();
  const bool ramp_vertical = (noise.next() & 1) != 0;

  std::vector<float> px(C * H * W);
  const double denom_y = double(std::max<std::size_t>(H - 1, 1));
  const double denom_x = double(std::max<std::size_t>(W - 1, 1));
  const double ct = std::cos(scene.theta), st = std::sin(scene.theta);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = double(y) - scene.cy, dx = double(x) - scene.cx;
      const double rr = dy * dy + dx * dx;
      // glyph-frame coordinates: rotation is another rendered nuisance
      const double gx = ct * dx + st * dy, gy = ct * dy - st * dx;
      bool inside = false;
      switch (scene.shape) {
        case 0: inside = std::abs(gx) <= r && std::abs(gy) <= std::max(1.0, 0.6 * r); break;
        case 1: inside = rr <= r * r; break;
        case 2:
          inside = (std::abs(gx) <= bar && std::abs(gy) <= r) ||
                   (std::abs(gy) <= bar && std::abs(gx) <= r);
          break;
        case 3: inside = rr <= r * r && rr >= r_in * r_in; break;
        default: throw std::logic_error("bad shape class");
      }
      const double ramp = ramp_vertical ? slope * (double(y) / denom_y - 0.5)
                                        : slope * (double(x) / denom_x - 0.5);
      double v = base + ramp + (noise.real() - 0.5) * 0.50;
      if (inside) v += delta;
      v = std::clamp(v, 0.0, 1.0);
      for (std::size_t c = 0; c < C; ++c) px[(c * H + y) * W + x] = float(v);
    }
  return px;
}

// Size is a rendered nuisance the report does not mention; the text carries
// intensity, shape, and coarse position only.
std::string report_for_scene(const Scene& s) {
  std::ostringstream os;
  os << "a " << kBright[s.bright] << ' ' << kShapes[s.shape] << " in the "
     << kRows[s.region / 2] << ' ' << kCols[s.region % 2] << " region";
  return os.str();
}

Vocabulary corpus_vocabulary() {
  Vocabulary v = Vocabulary::with_reserved();
  for (const char* w : {"a", "in", "the", "region"}) v.add(w);
  for (const auto& w : kSizes) v.add(w);
  for (const auto& w : kBright) v.add(w);
  for (const auto& w : kShapes) v.add(w);
  for (const auto& w : kRows) v.add(w);
  for (const auto& w : kCols) v.add(w);
  for (char c = 'a'; c <= 'z'; ++c) v.add(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) v.add("##" + std::string(1, c));
  return v;
}

int glyph_label(const std::string& report) {
  std::istringstream words(report);
  std::string w;
  while (words >> w) {
    auto it = std::find(kShapes.begin(), kShapes.end(), w);
    if (it != kShapes.end()) return int(it - kShapes.begin());
  }
  return -1;
}

void generate_corpus(const std::string& dir, std::size_t n, const SyntheticWorld& world) {
  if (n == 0) throw std::invalid_argument("generate_corpus: need at least one sample");
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ofstream img(fs::path(dir) / "images.bin", std::ios::binary | std::ios::trunc);
  if (!img) throw std::runtime_error("cannot write images file in " + dir);
  img.write(kImageMagic, sizeof(kImageMagic));
  write_pod(img, kImageVersion);
  write_pod(img, std::uint64_t(n));
  write_pod(img, std::uint32_t(world.channels));
  write_pod(img, std::uint32_t(world.height));
  write_pod(img, std::uint32_t(world.width));
  write_pod(img, std::uint32_t(32));  // bits per pixel value

  std::ofstream rep(fs::path(dir) / "reports.txt", std::ios::trunc);
  if (!rep) throw std::runtime_error("cannot write reports file in " + dir);

  for (std::size_t i = 0; i < n; ++i) {
    const Scene scene = sample_scene(world, i);
    const auto px = render_scene(world, scene);
    img.write(reinterpret_cast<const char*>(px.data()),
              std::streamsize(px.size() * sizeof(float)));
    rep << report_for_scene(scene) << '\n';
  }
  if (!img || !rep) throw std::runtime_error("corpus write failed in " + dir);

  corpus_vocabulary().save((fs::path(dir) / "vocab.txt").string());

  std::ofstream man(fs::path(dir) / "manifest.txt", std::ios::trunc);
  man << "seed=" << world.seed << '\n'
      << "count=" << n << '\n'
      << "channels=" << world.channels << '\n'
      << "height=" << world.height << '\n'
      << "width=" << world.width << '\n'
      << "version=" << kImageVersion << '\n';
  if (!man) throw std::runtime_error("cannot write manifest in " + dir);
}

LoadedCorpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string img_path = (fs::path(dir) / "images.bin").string();
  std::ifstream img(img_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + img_path);

  char magic[4];
  img.read(magic, sizeof(magic));
  if (!img || std::string(magic, 4) != std::string(kImageMagic, 4))
    throw std::runtime_error("not a corpus image file (bad magic): " + img_path);
  std::uint32_t version = 0, c = 0, h = 0, w = 0, bits = 0;
  std::uint64_t count = 0;
  read_pod(img, version);
  read_pod(img, count);
  read_pod(img, c);
  read_pod(img, h);
  read_pod(img, w);
  read_pod(img, bits);
  if (!img) throw std::runtime_error("truncated corpus header: " + img_path);
  if (version != kImageVersion)
    throw std::runtime_error("unsupported corpus version " + std::to_string(version) + " in " +
                             img_path);
  if (bits != 32) throw std::runtime_error("unsupported pixel precision in " + img_path);

  LoadedCorpus out;
  out.channels = c;
  out.height = h;
  out.width = w;
  out.images.resize(count);
  const std::size_t per = std::size_t(c) * h * w;
  for (auto& image : out.images) {
    image.resize(per);
    img.read(reinterpret_cast<char*>(image.data()), std::streamsize(per * sizeof(float)));
    if (!img) throw std::runtime_error("truncated image payload: " + img_path);
  }

  const std::string rep_path = (fs::path(dir) / "reports.txt").string();
  std::ifstream rep(rep_path);
  if (!rep) throw std::runtime_error("cannot open " + rep_path);
  std::string line;
  while (std::getline(rep, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.reports.push_back(line);
  }
  if (out.reports.size() != out.images.size())
    throw std::runtime_error("corpus mismatch: " + std::to_string(out.images.size()) +
                             " images vs " + std::to_string(out.reports.size()) + " reports in " +
                             dir);

  out.vocab = Vocabulary::load((fs::path(dir) / "vocab.txt").string());

  std::ifstream man(fs::path(dir) / "manifest.txt");
  if (man) {
    while (std::getline(man, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) out.manifest[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(mix_seed(seed ^ 0x45504f4348ull, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace mpma
