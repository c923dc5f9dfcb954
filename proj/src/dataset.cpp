#include "mcseg/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mcseg/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcseg {

Manifest Manifest::load(const std::string& dataset_dir) {
  const std::string path = (fs::path(dataset_dir) / "manifest.json").generic_string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open manifest"));
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(cat(path, ": ", e.what()));
  }
  Manifest m;
  try {
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.num_classes = j.at("K").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const json& js : j.at("samples")) {
      ManifestEntry e;
      e.id = js.at("id").get<std::string>();
      const std::string dom = js.at("domain").get<std::string>();
      if (dom == "source") e.domain = Domain::Source;
      else if (dom == "target") e.domain = Domain::Target;
      else throw ConfigError(cat(path, ": unknown domain \"", dom, "\""));
      e.split = js.at("split").get<std::string>();
      e.labels_usage = js.value("labels_usage", "train");
      for (auto& [key, value] : js.at("files").items()) {
        e.files[key] = value.get<std::string>();
      }
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError(cat(path, ": malformed manifest: ", e.what()));
  }
  if (m.num_classes < 2) throw ConfigError(cat(path, ": manifest K must be >= 2"));
  return m;
}

DatasetReader::DatasetReader(std::string dataset_dir)
    : dir_(std::move(dataset_dir)), manifest_(Manifest::load(dir_)) {}

std::vector<int> DatasetReader::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(manifest_.samples.size()); ++i) {
    if (manifest_.samples[static_cast<std::size_t>(i)].canonical_split() == split) out.push_back(i);
  }
  return out;
}

namespace {

Tensor planar_from_interleaved(const ImageU8& img) {
  const int H = img.height, W = img.width;
  Tensor t({3, H, W});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        t.data[static_cast<std::size_t>(ch) * H * W + static_cast<std::size_t>(r) * W + c] =
            static_cast<float>(img.data[(static_cast<std::size_t>(r) * W + c) * 3 +
                                        static_cast<std::size_t>(ch)]) / 255.f;
      }
  return t;
}

}  // namespace

const Sample& DatasetReader::sample(int index, unsigned fields) {
  if (index < 0 || index >= static_cast<int>(manifest_.samples.size())) {
    throw ContractError(cat("sample index ", index, " out of range"));
  }
  Entry& entry = cache_[index];
  const ManifestEntry& e = manifest_.samples[static_cast<std::size_t>(index)];
  entry.sample.id = e.id;
  entry.sample.domain = e.domain;

  auto path_of = [&](const char* kind) {
    auto fit = e.files.find(kind);
    if (fit == e.files.end()) throw IoError(cat("sample ", e.id, " has no ", kind, " file"));
    std::string p = (fs::path(dir_) / fit->second).generic_string();
    opened_.push_back(p);
    return p;
  };
  const unsigned missing = fields & ~entry.loaded;

  if (missing & kFieldRgb) {
    entry.sample.rgb = planar_from_interleaved(read_ppm(path_of("rgb")));
    entry.loaded |= kFieldRgb;
  }
  if (missing & kFieldHha) {
    entry.sample.hha = planar_from_interleaved(read_ppm(path_of("hha")));
    entry.loaded |= kFieldHha;
  }
  if (missing & kFieldDepth) {
    const ImageU16 depth = read_pgm16(path_of("depth"));
    entry.sample.depth = Tensor({depth.height, depth.width});
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
      entry.sample.depth.data[i] = static_cast<float>(depth.data[i]) / 1000.f;
    }
    entry.loaded |= kFieldDepth;
  }
  if (missing & kFieldLabels) {
    const ImageU8 labels = read_pgm8(path_of("labels"));
    entry.sample.labels = LabelMap(labels.height, labels.width);
    entry.sample.labels.values = labels.data;
    entry.loaded |= kFieldLabels;
  }
  if (missing & kFieldBoundaries) {
    const ImageU8 bounds = read_pgm8(path_of("boundaries"));
    entry.sample.boundaries = BoundaryMap(bounds.height, bounds.width);
    for (std::size_t i = 0; i < bounds.data.size(); ++i) {
      entry.sample.boundaries.values[i] = bounds.data[i] >= 128 ? 1.f : 0.f;
    }
    entry.loaded |= kFieldBoundaries;
  }
  return entry.sample;
}

Tensor as_batch(const Tensor& chw) {
  Tensor out;
  out.shape.assign({1});
  out.shape.insert(out.shape.end(), chw.shape.begin(), chw.shape.end());
  out.data = chw.data;
  return out;
}

}  // namespace mcseg
