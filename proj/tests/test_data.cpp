#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "csn/container.hpp"
#include "csn/data.hpp"
#include "csn/errors.hpp"
#include "csn/synth.hpp"
#include "doctest.h"

using namespace csn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("csn_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetManifest parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "test.csv");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// Fraction of a pattern's energy inside span{signatures}.
double signature_energy_fraction(const Tensor& v, const std::vector<Tensor>& sig) {
  const std::size_t n = sig.size(), d = v.numel();
  Eigen::MatrixXd S(d, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < d; ++i) S(i, j) = sig[j][i];
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.data().data(), d);
  Eigen::VectorXd coef = S.colPivHouseholderQr().solve(x);
  const double total = x.squaredNorm();
  return total > 0.0 ? (S * coef).squaredNorm() / total : 0.0;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = double(k);
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

const char* kHeader = "participant,frame,image,ref,au_AU1,au_AU2\n";

}  // namespace

TEST_CASE("minimal manifest parses") {
  DatasetManifest m = parse(std::string(kHeader) + "S1,0,a.pgm,0,0,0\nS1,1,a.pgm,0,2,5\n");
  CHECK(m.participants() == std::vector<std::string>{"S1"});
  CHECK(m.au_names == std::vector<std::string>{"AU1", "AU2"});
  CHECK(m.frames[1].intensities == std::vector<int>{2, 5});
  CHECK(m.frames_of("S1").size() == 2);
  CHECK(m.index_of("S1", 1) == 1);
}

TEST_CASE("manifest errors name the row") {
  CHECK(error_of(std::string(kHeader) + "S1,0,a.pgm,0,0,0\nS1,1,a.pgm,0,6,0\n").find(":3:") != std::string::npos);
  CHECK(error_of(std::string(kHeader) + "S1,0,a.pgm,0,0,0\nS1,0,b.pgm,0,1,0\n").find("duplicate") !=
        std::string::npos);
  CHECK(error_of("participant,frame,ref,au_AU1\nS1,0,0,0\n").find("image") != std::string::npos);
  CHECK(error_of(std::string(kHeader) + "S1,0,a.pgm,0,0\n").find(":2:") != std::string::npos);
  CHECK(error_of(std::string(kHeader) + "S1,x,a.pgm,0,0,0\n") != "");
  CHECK(error_of(std::string(kHeader) + "S1,0,a.pgm,2,0,0\n") != "");
  CHECK(error_of(std::string(kHeader) + ",0,a.pgm,0,0,0\n") != "");
  CHECK(error_of("participant,frame,image,ref\nS1,0,a.pgm,0\n") != "");
}

TEST_CASE("manifest write/parse round trip") {
  DatasetManifest m = parse(std::string(kHeader) + "S2,3,x.csnt#e,1,1,0\nS1,0,a.pgm,0,0,4\nS1,7,a.pgm,0,3,3\n");
  std::ostringstream out;
  write_manifest(m, out);
  CHECK(parse(out.str()) == m);
}

TEST_CASE("reference selection") {
  DatasetManifest a = parse(std::string(kHeader) + "S,10,a.pgm,0,0,0\nS,4,a.pgm,0,1,2\nS,7,a.pgm,0,0,0\n");
  CHECK(select_reference(a, "S") == 7);
  DatasetManifest b = parse(std::string(kHeader) + "S,0,a.pgm,0,1,1\nS,1,a.pgm,0,1,0\nS,2,a.pgm,0,2,2\n");
  CHECK(select_reference(b, "S") == 1);
  DatasetManifest c = parse(std::string(kHeader) + "S,0,a.pgm,0,0,0\nS,1,a.pgm,1,3,2\n");
  CHECK(select_reference(c, "S") == 1);
  CHECK_THROWS_AS(select_reference(c, "T"), DataError);
  DatasetManifest d = parse(std::string(kHeader) + "S,0,a.pgm,1,0,0\nS,1,a.pgm,1,3,2\n");
  CHECK_THROWS_AS(select_reference(d, "S"), DataError);
}

TEST_CASE("folds") {
  std::string text = kHeader;
  for (int p = 0; p < 9; ++p) text += "P" + std::to_string(p) + ",0,a.pgm,0,0,0\n";
  DatasetManifest m = parse(text);
  FoldSpec lopo = make_folds(m, 9, 1);
  for (std::size_t f = 0; f < 9; ++f) CHECK(lopo.participants_in(f).size() == 1);
  CHECK(lopo.fold_of.size() == 9);

  DatasetManifest six = parse(std::string(kHeader) +
                              "A,0,a.pgm,0,0,0\nB,0,a.pgm,0,0,0\nC,0,a.pgm,0,0,0\n"
                              "D,0,a.pgm,0,0,0\nE,0,a.pgm,0,0,0\nF,0,a.pgm,0,0,0\n");
  FoldSpec f3 = make_folds(six, 3, 42);
  for (std::size_t f = 0; f < 3; ++f) CHECK(f3.participants_in(f).size() == 2);
  CHECK(make_folds(six, 3, 42).fold_of == f3.fold_of);
  CHECK_THROWS(make_folds(six, 7, 42));
  CHECK_THROWS(make_folds(six, 0, 42));

  // A different seed changes the assignment for at least one of a few seeds.
  bool changed = false;
  for (std::uint64_t s = 1; s < 5; ++s) changed = changed || make_folds(six, 3, s).fold_of != f3.fold_of;
  CHECK(changed);
}

TEST_CASE("fold groups must not overlap") {
  CHECK_THROWS(FoldSpec::from_groups({{"A", "B"}, {"B", "C"}}));
  CHECK_THROWS(FoldSpec::from_groups({{"A"}, {}}));
  FoldSpec ok = FoldSpec::from_groups({{"A", "B"}, {"C"}});
  CHECK(ok.k == 2);
  CHECK(ok.fold_of.at("C") == 1);
}

TEST_CASE("container round trip and corruption") {
  std::vector<NamedTensor> entries{{"a", round_to_f32(Tensor({2, 3}, std::vector<double>{1, -2, 3.5, 0, 1e-3, 7}))},
                                   {"scalar", Tensor::scalar(0.25)},
                                   {"img/0001", round_to_f32(Tensor({1, 4, 4}, 0.3))}};
  std::string bytes = encode_container(entries);
  CHECK(decode_container(bytes) == entries);
  CHECK(decode_container(encode_container({})).empty());

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_container(bad_magic), DataError);
  CHECK_THROWS_AS(decode_container(bytes.substr(0, bytes.size() - 3)), DataError);
  std::string flipped = bytes;
  flipped[bytes.size() - 10] ^= 0x20;
  CHECK_THROWS_AS(decode_container(flipped), DataError);
  CHECK_THROWS_AS(decode_container(bytes + "x"), DataError);

  fs::path dir = scratch("container");
  write_container(dir / "t.csnt", entries);
  CHECK(read_container(dir / "t.csnt") == entries);
}

TEST_CASE("container widening: f32 on disk") {
  Tensor t({1}, 0.1);
  CHECK(decode_container(encode_container({{"x", t}}))[0].value[0] == double(0.1f));
}

TEST_CASE("PGM images and manifest loading") {
  fs::path dir = scratch("pgm");
  Tensor img({1, 3, 4});
  for (std::size_t i = 0; i < 12; ++i) img[i] = double(i * 20) / 255.0;
  write_pgm(dir / "f.pgm", img);
  Tensor back = read_pgm(dir / "f.pgm");
  CHECK(back.shape() == Shape{1, 3, 4});
  for (std::size_t i = 0; i < 12; ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));

  write_container(dir / "im.csnt", {{"x", round_to_f32(Tensor({1, 3, 4}, 0.5))}});
  {
    std::ofstream f(dir / "m.csv");
    f << kHeader << "S,0,f.pgm,0,0,0\nS,1,im.csnt#x,0,2,0\n";
  }
  Dataset ds = load_dataset(dir / "m.csv");
  CHECK(ds.images.size() == 2);
  CHECK(ds.images[1][0] == 0.5);
  {
    std::ofstream f(dir / "bad.csv");
    f << kHeader << "S,0,missing.pgm,0,0,0\n";
  }
  CHECK_THROWS_AS(load_manifest(dir / "bad.csv"), DataError);
  {
    std::ofstream f(dir / "bad2.csv");
    f << kHeader << "S,0,im.csnt#nope,0,0,0\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "bad2.csv"), DataError);
}

TEST_CASE("synthetic generator basics") {
  SynthConfig cfg;
  cfg.participants = 3;
  cfg.frames_per_participant = 20;
  SynthDataset a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  CHECK(a.images == b.images);
  CHECK(encode_container({{"x", a.images[5]}}) == encode_container({{"x", b.images[5]}}));
  CHECK(a.manifest.participants() == std::vector<std::string>{"P01", "P02", "P03"});
  CHECK(a.manifest.au_names.size() == 6);
  for (const auto& p : a.manifest.participants()) {
    const long ref = select_reference(a.manifest, p);
    const auto& f = a.manifest.frames[a.manifest.index_of(p, ref)];
    CHECK(std::all_of(f.intensities.begin(), f.intensities.end(), [](int v) { return v == 0; }));
  }
  cfg.seed = 43;
  CHECK_FALSE(generate_synthetic(cfg).images == a.images);
  cfg.overlap = 1.5;
  CHECK_THROWS(generate_synthetic(cfg));
  cfg.overlap = 0.5;
  cfg.zero_mass = 1.0;
  CHECK_THROWS(generate_synthetic(cfg));
}

TEST_CASE("synthetic images follow the generative formula") {
  SynthConfig cfg;
  cfg.participants = 2;
  cfg.frames_per_participant = 10;
  cfg.noise = 0.0;
  SynthDataset d = generate_synthetic(cfg);
  for (std::size_t k = 0; k < d.manifest.frames.size(); ++k) {
    const auto& f = d.manifest.frames[k];
    const auto& id = d.identities[f.participant == "P01" ? 0 : 1];
    for (std::size_t i = 0; i < d.images[k].numel(); i += 37) {
      double v = id.base[i] + id.bias[i];
      for (std::size_t j = 0; j < 6; ++j) v += f.intensities[j] / 5.0 * d.signatures[j][i];
      CHECK(d.images[k][i] == doctest::Approx(v).epsilon(1e-6));
    }
  }
}

TEST_CASE("intensity distribution is zero-inflated") {
  SynthConfig cfg;
  cfg.participants = 4;
  cfg.frames_per_participant = 500;
  SynthDataset d = generate_synthetic(cfg);
  std::array<double, 6> hist{};
  double total = 0;
  for (const auto& f : d.manifest.frames)
    if (f.frame > 0)
      for (int v : f.intensities) hist[v] += 1, total += 1;
  CHECK(hist[0] / total == doctest::Approx(0.7).epsilon(0.03));
  // Geometric decay 0.5: each level about half the previous one.
  CHECK(hist[2] / hist[1] == doctest::Approx(0.5).epsilon(0.15));
}

TEST_CASE("overlap 0 leaves identity bias orthogonal to every signature") {
  SynthConfig cfg;
  cfg.participants = 20;
  cfg.frames_per_participant = 2;
  cfg.overlap = 0.0;
  SynthDataset d = generate_synthetic(cfg);
  for (const auto& id : d.identities)
    for (const auto& s : d.signatures) CHECK(std::abs(dot(id.bias, s)) < 1e-9 * std::sqrt(dot(id.bias, id.bias) + 1));
}

TEST_CASE("bias energy in the signature span rises with overlap") {
  std::vector<double> overlaps{0.0, 0.25, 0.5, 0.75, 1.0}, means;
  for (double o : overlaps) {
    SynthConfig cfg;
    cfg.participants = 120;
    cfg.frames_per_participant = 2;
    cfg.overlap = o;
    SynthDataset d = generate_synthetic(cfg);
    double acc = 0.0;
    for (const auto& id : d.identities) acc += signature_energy_fraction(id.bias, d.signatures);
    means.push_back(acc / double(d.identities.size()));
  }
  CHECK(means.front() < 1e-12);
  CHECK(means.back() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(spearman(overlaps, means) >= 0.0);
  for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] > means[i - 1]);
}

TEST_CASE("least-squares probe overestimates AU4 on a strongly biased identity at overlap 1") {
  SynthConfig cfg;
  cfg.participants = 16;
  cfg.frames_per_participant = 80;
  cfg.overlap = 1.0;
  SynthDataset d = generate_synthetic(cfg);
  const std::size_t au4 = 2;  // AU1, AU2, AU4, ...
  REQUIRE(d.manifest.au_names[au4] == "AU4");

  // The identity with the largest AU4-shaped bias amplitude.
  std::size_t target = 0;
  double best = -1.0;
  for (std::size_t p = 0; p < d.identities.size(); ++p) {
    double a = 0.0;
    for (std::size_t b = 0; b < d.identities[p].blob_aus.size(); ++b)
      if (d.identities[p].blob_aus[b] == au4) a += d.identities[p].blob_amplitudes[b];
    if (a > best) best = a, target = p;
  }
  REQUIRE(best > 0.2);
  const std::string who = d.identities[target].participant;

  // Ridge least squares on pixels + intercept, fit on everyone else.
  const std::size_t dim = d.images[0].numel();
  std::vector<std::size_t> train;
  for (std::size_t k = 0; k < d.manifest.frames.size(); ++k)
    if (d.manifest.frames[k].participant != who) train.push_back(k);
  Eigen::MatrixXd X(train.size(), dim + 1);
  Eigen::VectorXd y(train.size());
  for (std::size_t r = 0; r < train.size(); ++r) {
    for (std::size_t i = 0; i < dim; ++i) X(r, i) = d.images[train[r]][i];
    X(r, dim) = 1.0;
    y(r) = d.manifest.frames[train[r]].intensities[au4];
  }
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += 1e-3;
  Eigen::VectorXd w = A.ldlt().solve(X.transpose() * y);

  double err = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < d.manifest.frames.size(); ++k) {
    const auto& f = d.manifest.frames[k];
    if (f.participant != who || f.intensities[au4] != 0) continue;
    double pred = w(dim);
    for (std::size_t i = 0; i < dim; ++i) pred += w(i) * d.images[k][i];
    err += pred;
    ++count;
  }
  REQUIRE(count > 10);
  // Mean estimate on AU4-neutral frames is positive: the bias reads as AU4.
  CHECK(err / double(count) > 0.5);
}
