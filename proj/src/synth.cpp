#include "csn/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "csn/backbone.hpp"
#include "csn/container.hpp"
#include "csn/errors.hpp"

namespace csn {

void SynthConfig::validate() const {
  if (participants < 2) throw std::invalid_argument("synth: need at least 2 participants");
  if (frames_per_participant < 2) throw std::invalid_argument("synth: need at least 2 frames per participant");
  if (image_size < 8) throw std::invalid_argument("synth: image_size must be >= 8");
  if (num_aus < 1) throw std::invalid_argument("synth: num_aus must be >= 1");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw std::invalid_argument("synth: overlap must lie in [0,1]");
  if (!(zero_mass > 0.0 && zero_mass < 1.0)) throw std::invalid_argument("synth: zero_mass must lie in (0,1)");
  if (!(decay > 0.0)) throw std::invalid_argument("synth: decay must be > 0");
  if (!(noise >= 0.0) || !(bias_strength >= 0.0) || !(base_strength >= 0.0))
    throw std::invalid_argument("synth: noise and strengths must be >= 0");
}

std::vector<std::string> synthetic_au_names(std::size_t n) {
  static const char* kDisfa[] = {"AU1", "AU2", "AU4", "AU5", "AU6", "AU9", "AU12", "AU15", "AU17", "AU20", "AU25", "AU26"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i < std::size(kDisfa) ? kDisfa[i] : "AU" + std::to_string(100 + i));
  return out;
}

namespace {

using Image = std::vector<double>;

double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double a, const Image& x, Image& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

void add_gaussian(Image& img, std::size_t size, double cx, double cy, double sigma, double amp) {
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      img[y * size + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
}

// Symmetric pair of bumps per AU, rows spread from brow to mouth region.
Image au_signature(std::size_t j, std::size_t n, std::size_t size) {
  const double s = static_cast<double>(size);
  const double row = s * (0.18 + 0.64 * static_cast<double>(j) / static_cast<double>(n > 1 ? n - 1 : 1));
  const double dx = s * (j % 2 == 0 ? 0.18 : 0.30);
  Image img(size * size, 0.0);
  add_gaussian(img, size, (s - 1) / 2 - dx, row, s / 16.0, 1.0);
  add_gaussian(img, size, (s - 1) / 2 + dx, row, s / 16.0, 1.0);
  double mx = 0.0;
  for (double v : img) mx = std::max(mx, v);
  for (double& v : img) v /= mx;
  return img;
}

Image smooth_field(std::mt19937_64& rng, std::size_t size, std::size_t bumps) {
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(size - 1));
  std::uniform_real_distribution<double> width(static_cast<double>(size) / 12.0, static_cast<double>(size) / 5.0);
  std::normal_distribution<double> amp(0.0, 1.0);
  Image img(size * size, 0.0);
  for (std::size_t b = 0; b < bumps; ++b) {
    const double cx = pos(rng), cy = pos(rng), w = width(rng), a = amp(rng);
    add_gaussian(img, size, cx, cy, w, a);
  }
  return img;
}

Tensor to_tensor(const Image& img, std::size_t size) { return Tensor({1, size, size}, img); }

}  // namespace

SynthDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t S = cfg.image_size, n = cfg.num_aus;
  std::mt19937_64 rng(cfg.seed);
  SynthDataset out;
  out.manifest.au_names = synthetic_au_names(n);
  out.manifest.provenance = "synthetic seed=" + std::to_string(cfg.seed);

  std::vector<Image> sig;
  for (std::size_t j = 0; j < n; ++j) sig.push_back(au_signature(j, n, S));
  // Orthonormal basis of span{signatures}, for orthogonalizing bias patterns.
  std::vector<Image> basis;
  for (const auto& p : sig) {
    Image q = p;
    for (const auto& b : basis) axpy(-dot(q, b), b, q);
    const double nq = std::sqrt(dot(q, q));
    if (nq > 1e-9) {
      for (double& v : q) v /= nq;
      basis.push_back(std::move(q));
    }
  }
  for (const auto& p : sig) out.signatures.push_back(to_tensor(p, S));

  Image mean_face(S * S, 0.0);
  add_gaussian(mean_face, S, (static_cast<double>(S) - 1) / 2, (static_cast<double>(S) - 1) / 2, S / 3.0, 0.5);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_au(0, n - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> level_cdf;
  {
    double total = 0.0, w = 1.0;
    for (int j = 1; j <= kMaxIntensity; ++j, w *= cfg.decay) total += w;
    double acc = 0.0;
    w = 1.0;
    for (int j = 1; j <= kMaxIntensity; ++j, w *= cfg.decay) level_cdf.push_back(acc += w / total);
  }
  auto draw_intensity = [&]() {
    if (unit(rng) < cfg.zero_mass) return 0;
    const double u = unit(rng);
    for (int j = 0; j < kMaxIntensity; ++j)
      if (u < level_cdf[j]) return j + 1;
    return kMaxIntensity;
  };

  for (std::size_t p = 0; p < cfg.participants; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "P%02zu", p + 1);
    SynthIdentity id;
    id.participant = pid;

    Image base = smooth_field(rng, S, 6);
    for (double& v : base) v *= cfg.base_strength;
    axpy(1.0, mean_face, base);

    Image bias(S * S, 0.0);
    for (std::size_t b = 0; b < cfg.bias_blobs; ++b) {
      const std::size_t j = pick_au(rng);
      const double a = cfg.bias_strength * unit(rng);
      Image q = smooth_field(rng, S, 3);
      for (const auto& e : basis) axpy(-dot(q, e), e, q);
      const double scale = std::sqrt(dot(sig[j], sig[j]) / std::max(dot(q, q), 1e-300));
      for (double& v : q) v *= scale;
      Image blob(S * S, 0.0);
      axpy(cfg.overlap, sig[j], blob);
      axpy(1.0 - cfg.overlap, q, blob);
      axpy(a, blob, bias);
      id.blob_aus.push_back(j);
      id.blob_amplitudes.push_back(a);
    }
    id.base = to_tensor(base, S);
    id.bias = to_tensor(bias, S);

    for (std::size_t f = 0; f < cfg.frames_per_participant; ++f) {
      FrameRecord rec;
      rec.participant = pid;
      rec.frame = static_cast<long>(f);
      char entry[48];
      std::snprintf(entry, sizeof entry, "%s/%04zu", pid, f);
      rec.image = std::string("images.csnt#") + entry;
      rec.intensities.assign(n, 0);
      // Frame 0 is always neutral so every identity has a natural reference.
      if (f > 0)
        for (auto& v : rec.intensities) v = draw_intensity();
      Image img = base;
      axpy(1.0, bias, img);
      for (std::size_t j = 0; j < n; ++j)
        if (rec.intensities[j] > 0) axpy(rec.intensities[j] / static_cast<double>(kMaxIntensity), sig[j], img);
      for (double& v : img) v += cfg.noise * gauss(rng);
      // Stored at container precision so a write/load cycle is lossless.
      out.images.push_back(round_to_f32(to_tensor(img, S)));
      out.manifest.frames.push_back(std::move(rec));
    }
    out.identities.push_back(std::move(id));
  }
  return out;
}

void write_synthetic(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> entries;
  entries.reserve(data.images.size());
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const auto& ref = data.manifest.frames[i].image;
    entries.push_back({ref.substr(ref.find('#') + 1), data.images[i]});
  }
  write_container(dir / "images.csnt", entries);
  write_manifest(data.manifest, dir / "manifest.csv");
}

}  // namespace csn
