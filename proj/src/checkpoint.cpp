#include "mcseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace mcseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint raw arrays are written as little-endian host floats");

namespace {
constexpr char kMagic[] = "MCSEG1\n";
constexpr std::size_t kMagicLen = 7;
}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  json records = json::array();
  for (const Parameter& p : model.params) {
    records.push_back(json{{"name", p.name}, {"shape", p.value.shape}, {"dtype", "f32"}});
  }
  json header{{"params", records},
              {"meta",
               {{"fusion", to_string(model.cfg.fusion)},
                {"tasks", to_string(model.cfg.tasks)},
                {"num_classes", model.cfg.num_classes},
                {"width", model.cfg.width}}}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat(path, ": cannot open for writing"));
  out.write(kMagic, kMagicLen);
  const std::uint64_t len = header_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const Parameter& p : model.params) {
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
  }
  if (!out) throw IoError(cat(path, ": short write"));
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open checkpoint"));

  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (in.gcount() != static_cast<std::streamsize>(kMagicLen) ||
      std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw IoError(cat(path, ": bad checkpoint magic"));
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (in.gcount() != sizeof len || len == 0 || len > (1u << 26)) {
    throw IoError(cat(path, ": bad header length"));
  }
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len)) {
    throw IoError(cat(path, ": truncated header"));
  }

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw IoError(cat(path, ": unparsable header: ", e.what()));
  }

  Model m;
  try {
    const json& meta = header.at("meta");
    m.cfg.fusion = fusion_from_string(meta.at("fusion").get<std::string>());
    m.cfg.tasks = tasks_from_string(meta.at("tasks").get<std::string>());
    m.cfg.num_classes = meta.at("num_classes").get<int>();
    m.cfg.width = meta.at("width").get<int>();
    for (const json& rec : header.at("params")) {
      Parameter p;
      p.name = rec.at("name").get<std::string>();
      const auto shape = rec.at("shape").get<std::vector<int>>();
      if (rec.at("dtype").get<std::string>() != "f32") {
        throw IoError(cat(path, ": unsupported dtype for ", p.name));
      }
      p.value = Tensor(shape);
      m.params.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw IoError(cat(path, ": malformed header: ", e.what()));
  }

  for (Parameter& p : m.params) {
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(p.value.data.size() * sizeof(float))) {
      throw IoError(cat(path, ": truncated data for parameter ", p.name));
    }
  }

  // Shape validation: the stored records must match the architecture exactly.
  Rng probe(0);
  const Model reference = build_model(m.cfg, probe);
  if (reference.params.size() != m.params.size()) {
    throw IoError(cat(path, ": parameter count ", m.params.size(), " does not match architecture (",
                      reference.params.size(), ")"));
  }
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (reference.params[i].name != m.params[i].name ||
        reference.params[i].value.shape != m.params[i].value.shape) {
      throw IoError(cat(path, ": parameter ", i, " (", m.params[i].name,
                        ") does not match the declared architecture"));
    }
  }
  return m;
}

}  // namespace mcseg
