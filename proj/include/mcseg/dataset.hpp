#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mcseg/scenegen.hpp"

namespace mcseg {

struct ManifestEntry {
  std::string id;
  Domain domain = Domain::Source;
  std::string split;         // "train" | "test"
  std::string labels_usage;  // "train" | "eval_only"
  std::map<std::string, std::string> files;  // rgb/depth/hha/labels/boundaries

  std::string canonical_split() const {
    return (domain == Domain::Source ? "source_" : "target_") + split;
  }
};

struct Manifest {
  std::string version;
  std::uint64_t seed = 0;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> samples;

  static Manifest load(const std::string& dataset_dir);
};

// Which per-sample files to decode. Training deliberately loads only what a
// step consumes, so the file-open audit can prove e.g. that target labels are
// never read during adaptation.
enum SampleFields : unsigned {
  kFieldRgb = 1u << 0,
  kFieldHha = 1u << 1,
  kFieldDepth = 1u << 2,
  kFieldLabels = 1u << 3,
  kFieldBoundaries = 1u << 4,
  kFieldsAll = 0x1f,
};

// Loads samples from a written dataset, caching decoded fields. Every file
// open is recorded for auditing.
class DatasetReader {
 public:
  explicit DatasetReader(std::string dataset_dir);

  const Manifest& manifest() const { return manifest_; }
  const std::string& dir() const { return dir_; }

  // Indices into manifest().samples for a canonical split name
  // ("source_train", "target_train", "target_test").
  std::vector<int> split_indices(const std::string& split) const;

  const Sample& sample(int index, unsigned fields = kFieldsAll);

  const std::vector<std::string>& opened_paths() const { return opened_; }

 private:
  struct Entry {
    Sample sample;
    unsigned loaded = 0;
  };
  std::string dir_;
  Manifest manifest_;
  std::map<int, Entry> cache_;
  std::vector<std::string> opened_;
};

// [H,W]-shaped planar tensors stacked to a [1,C,H,W] batch of one.
Tensor as_batch(const Tensor& chw);

}  // namespace mcseg
