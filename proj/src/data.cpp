#include "csn/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "csn/backbone.hpp"
#include "csn/container.hpp"
#include "csn/errors.hpp"

namespace csn {

std::vector<std::string> DatasetManifest::participants() const {
  std::set<std::string> s;
  for (const auto& f : frames) s.insert(f.participant);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> DatasetManifest::frames_of(const std::string& participant) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].participant == participant) out.push_back(i);
  return out;
}

std::size_t DatasetManifest::index_of(const std::string& participant, long frame) const {
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].participant == participant && frames[i].frame == frame) return i;
  throw DataError("no frame " + std::to_string(frame) + " for participant " + participant);
}

void DatasetManifest::validate() const {
  if (au_names.empty()) throw DataError("manifest declares no AU columns");
  std::set<std::pair<std::string, long>> keys;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string where = "frame record " + std::to_string(i);
    if (f.participant.empty()) throw DataError(where + ": empty participant id");
    if (f.intensities.size() != au_names.size())
      throw DataError(where + ": " + std::to_string(f.intensities.size()) + " intensities for " +
                      std::to_string(au_names.size()) + " AUs");
    for (int v : f.intensities)
      if (v < 0 || v > kMaxIntensity) throw DataError(where + ": intensity " + std::to_string(v) + " outside 0..5");
    if (!keys.emplace(f.participant, f.frame).second)
      throw DataError(where + ": duplicate (participant, frame) key (" + f.participant + ", " +
                      std::to_string(f.frame) + ")");
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
bool parse_int(const std::string& s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && !s.empty();
}

const std::vector<std::string> kFixedColumns{"participant", "frame", "image", "ref"};

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const std::string& source) {
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { throw DataError(source + ":" + std::to_string(lineno) + ": " + msg); };
  auto next_line = [&]() {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next_line()) fail("empty manifest");
  const auto header = split_csv(line);
  for (std::size_t c = 0; c < kFixedColumns.size(); ++c)
    if (c >= header.size() || header[c] != kFixedColumns[c]) fail("missing column '" + kFixedColumns[c] + "'");
  for (std::size_t c = kFixedColumns.size(); c < header.size(); ++c) {
    if (!header[c].starts_with("au_") || header[c].size() == 3) fail("unexpected column '" + header[c] + "'");
    m.au_names.push_back(header[c].substr(3));
  }
  if (m.au_names.empty()) fail("missing au_<NAME> columns");

  std::set<std::pair<std::string, long>> keys;
  while (next_line()) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      fail("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    FrameRecord r;
    r.participant = cells[0];
    if (r.participant.empty()) fail("empty participant id");
    if (!parse_int(cells[1], r.frame)) fail("bad frame id '" + cells[1] + "'");
    r.image = cells[2];
    if (cells[3] != "0" && cells[3] != "1") fail("ref must be 0 or 1, got '" + cells[3] + "'");
    r.is_reference = cells[3] == "1";
    for (std::size_t c = kFixedColumns.size(); c < cells.size(); ++c) {
      int v = 0;
      if (!parse_int(cells[c], v)) fail("bad intensity '" + cells[c] + "' in column " + header[c]);
      if (v < 0 || v > kMaxIntensity) fail("intensity " + std::to_string(v) + " in column " + header[c] + " outside 0..5");
      r.intensities.push_back(v);
    }
    if (!keys.emplace(r.participant, r.frame).second)
      fail("duplicate (participant, frame) key (" + r.participant + ", " + cells[1] + ")");
    m.frames.push_back(std::move(r));
  }
  m.provenance = source;
  return m;
}

namespace {

struct ImageRef {
  std::filesystem::path file;
  std::string entry;  // empty for PGM
};

ImageRef parse_image_ref(const std::string& ref, const std::filesystem::path& base) {
  const auto hash = ref.find('#');
  if (hash != std::string::npos) return {base / ref.substr(0, hash), ref.substr(hash + 1)};
  return {base / ref, {}};
}

// Resolves every image reference, loading each container once.
std::vector<Tensor> resolve_images(const DatasetManifest& m, const std::filesystem::path& base) {
  std::unordered_map<std::string, std::unordered_map<std::string, Tensor>> containers;
  std::vector<Tensor> out;
  out.reserve(m.frames.size());
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const auto& f = m.frames[i];
    const auto ref = parse_image_ref(f.image, base);
    const std::string where = "row " + std::to_string(i + 2) + " (" + f.participant + ", " + std::to_string(f.frame) + ")";
    Tensor img;
    if (ref.entry.empty()) {
      if (!std::filesystem::exists(ref.file)) throw DataError(where + ": dangling image reference " + f.image);
      img = read_pgm(ref.file);
    } else {
      const std::string key = ref.file.string();
      auto it = containers.find(key);
      if (it == containers.end()) {
        if (!std::filesystem::exists(ref.file)) throw DataError(where + ": dangling image reference " + f.image);
        std::unordered_map<std::string, Tensor> entries;
        for (auto& e : read_container(ref.file)) entries.emplace(std::move(e.name), std::move(e.value));
        it = containers.emplace(key, std::move(entries)).first;
      }
      auto e = it->second.find(ref.entry);
      if (e == it->second.end()) throw DataError(where + ": dangling image reference " + f.image);
      img = e->second;
      if (img.rank() == 2) img = Tensor({1, img.dim(0), img.dim(1)}, img.vec());
      if (img.rank() != 3) throw DataError(where + ": image " + f.image + " has shape " + shape_str(img.shape()));
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m = parse_manifest(f, path.string());
  resolve_images(m, path.parent_path());
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw DataError("cannot open manifest " + manifest_path.string());
  Dataset d;
  d.manifest = parse_manifest(f, manifest_path.string());
  d.images = resolve_images(d.manifest, manifest_path.parent_path());
  if (!d.images.empty())
    for (const auto& img : d.images)
      if (img.shape() != d.images.front().shape())
        throw DataError("images in " + manifest_path.string() + " do not share one shape");
  return d;
}

void write_manifest(const DatasetManifest& m, std::ostream& out) {
  out << "participant,frame,image,ref";
  for (const auto& a : m.au_names) out << ",au_" << a;
  out << '\n';
  for (const auto& f : m.frames) {
    out << f.participant << ',' << f.frame << ',' << f.image << ',' << (f.is_reference ? 1 : 0);
    for (int v : f.intensities) out << ',' << v;
    out << '\n';
  }
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  write_manifest(m, f);
}

long select_reference(const DatasetManifest& m, const std::string& participant) {
  const auto idx = m.frames_of(participant);
  if (idx.empty()) throw DataError("participant " + participant + " not in manifest");
  const FrameRecord* flagged = nullptr;
  for (auto i : idx)
    if (m.frames[i].is_reference) {
      if (flagged) throw DataError("participant " + participant + " has more than one frame flagged as reference");
      flagged = &m.frames[i];
    }
  if (flagged) return flagged->frame;
  const FrameRecord* best = nullptr;
  long best_sum = 0;
  for (auto i : idx) {
    const auto& f = m.frames[i];
    long s = 0;
    for (int v : f.intensities) s += v;
    if (!best || s < best_sum || (s == best_sum && f.frame < best->frame)) {
      best = &f;
      best_sum = s;
    }
  }
  return best->frame;
}

std::vector<std::string> FoldSpec::participants_in(std::size_t fold) const {
  std::vector<std::string> out;
  for (const auto& [p, f] : fold_of)
    if (f == fold) out.push_back(p);
  return out;
}

void FoldSpec::validate() const {
  if (k == 0) throw std::invalid_argument("fold count must be >= 1");
  std::vector<std::size_t> sizes(k, 0);
  for (const auto& [p, f] : fold_of) {
    if (f >= k) throw std::invalid_argument("participant " + p + " mapped to fold " + std::to_string(f) + " >= k");
    ++sizes[f];
  }
  for (std::size_t f = 0; f < k; ++f)
    if (sizes[f] == 0) throw std::invalid_argument("fold " + std::to_string(f) + " is empty");
}

FoldSpec FoldSpec::from_groups(const std::vector<std::vector<std::string>>& groups) {
  FoldSpec spec;
  spec.k = groups.size();
  for (std::size_t f = 0; f < groups.size(); ++f)
    for (const auto& p : groups[f])
      if (!spec.fold_of.emplace(p, f).second)
        throw std::invalid_argument("participant " + p + " assigned to more than one fold");
  spec.validate();
  return spec;
}

FoldSpec make_folds(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
  auto people = manifest.participants();
  if (k == 0 || k > people.size())
    throw std::invalid_argument("cannot build " + std::to_string(k) + " folds from " + std::to_string(people.size()) +
                                " participants");
  std::mt19937_64 rng(seed);
  std::shuffle(people.begin(), people.end(), rng);
  FoldSpec spec;
  spec.k = k;
  for (std::size_t i = 0; i < people.size(); ++i) spec.fold_of[people[i]] = i % k;
  spec.validate();
  return spec;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  auto next_int = [&]() {
    long v = -1;
    while (f >> std::ws && f.peek() == '#') {
      std::string comment;
      std::getline(f, comment);
    }
    f >> v;
    if (!f || v <= 0) throw DataError(path.string() + ": malformed PGM header");
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw DataError(path.string() + ": only maxval 255 is supported");
  f.get();  // single whitespace before raster
  std::vector<unsigned char> raster(static_cast<std::size_t>(w * h));
  f.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (f.gcount() != static_cast<std::streamsize>(raster.size())) throw DataError(path.string() + ": truncated PGM raster");
  std::vector<double> data(raster.size());
  for (std::size_t i = 0; i < raster.size(); ++i) data[i] = raster[i] / 255.0;
  return Tensor({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(data));
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("write_pgm expects [1,H,W], got " + shape_str(image.shape()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << "P5\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  for (double v : image.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    f.put(static_cast<char>(static_cast<unsigned char>(c * 255.0 + 0.5)));
  }
}

}  // namespace csn
