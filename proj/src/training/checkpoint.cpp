#include "pivotmt/training/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "pivotmt/binary_io.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/hash.hpp"

namespace pivotmt::training {

using model::Group;
using tensor::Tensor;

namespace {

constexpr std::string_view kMagic = "PTLCKPT1";
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kF64 = 1;
constexpr std::string_view kAdapterKey = "adapter/matrix";

// "encoder.layer0.ff.w1" in group encoder is stored as "encoder/layer0.ff.w1".
std::string file_key(const std::string& name, Group g) {
  const std::string group(model::to_string(g));
  if (name.size() > group.size() && name.compare(0, group.size(), group) == 0 && name[group.size()] == '.') {
    return group + "/" + name.substr(group.size() + 1);
  }
  return group + "/" + name;
}

std::pair<Group, std::string> param_name(const std::string& key, const std::string& what) {
  const auto slash = key.find('/');
  if (slash == std::string::npos) throw IoError(what + ": malformed tensor key '" + key + "'");
  const Group g = model::group_from_string(key.substr(0, slash));
  return {g, std::string(model::to_string(g)) + "." + key.substr(slash + 1)};
}

template <typename T>
void write_tensor(std::ostream& out, const std::string& key, const Tensor<T>& t) {
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
  binary::write_bytes(out, key);
  binary::write<std::uint8_t>(out, std::is_same_v<T, float> ? kF32 : kF64);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
  for (auto d : t.shape()) binary::write<std::uint64_t>(out, d);
  binary::write_array(out, t.storage());
}

struct RawTensor {
  std::string key;
  std::uint8_t dtype = kF32;
  tensor::Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;
};

RawTensor read_tensor(std::istream& in, const std::string& what) {
  RawTensor r;
  const auto len = binary::read<std::uint32_t>(in, what);
  if (len > 4096) throw IoError(what + ": tensor name too long");
  r.key = binary::read_bytes(in, len, what);
  r.dtype = binary::read<std::uint8_t>(in, what);
  if (r.dtype != kF32 && r.dtype != kF64) throw IoError(what + ": unknown dtype tag for '" + r.key + "'");
  const auto rank = binary::read<std::uint32_t>(in, what);
  if (rank > 8) throw IoError(what + ": implausible rank for '" + r.key + "'");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = binary::read<std::uint64_t>(in, what);
    if (d > (std::uint64_t{1} << 32)) throw IoError(what + ": implausible dimension for '" + r.key + "'");
    r.shape.push_back(static_cast<std::size_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  if (n > (std::size_t{1} << 32)) throw IoError(what + ": tensor '" + r.key + "' too large");
  if (r.dtype == kF32) {
    r.f32 = binary::read_array<float>(in, n, what);
  } else {
    r.f64 = binary::read_array<double>(in, n, what);
  }
  return r;
}

std::size_t tensor_record_size(const std::string& key, std::size_t rank, std::size_t count, std::size_t elem) {
  return 4 + key.size() + 1 + 4 + 8 * rank + count * elem;
}

}  // namespace

bool ProvenanceRecord::has_stage(std::string_view name) const {
  if (stage == name) return true;
  for (const auto& p : parents) {
    if (p.has_stage(name)) return true;
  }
  return false;
}

bool ProvenanceRecord::complete() const {
  if (parents.empty()) return init_seed.has_value();
  for (const auto& p : parents) {
    if (!p.complete()) return false;
  }
  return true;
}

std::size_t ProvenanceRecord::depth() const {
  std::size_t d = 0;
  for (const auto& p : parents) d = std::max(d, p.depth());
  return d + 1;
}

void to_json(nlohmann::json& j, const ProvenanceRecord& p) {
  j = nlohmann::json{{"recipe", p.recipe},
                     {"stage", p.stage},
                     {"train_seed", p.train_seed},
                     {"frozen_groups", p.frozen_groups},
                     {"lr_reset", p.lr_reset},
                     {"parents", p.parents}};
  j["init_seed"] = p.init_seed ? nlohmann::json(*p.init_seed) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ProvenanceRecord& p) {
  p.recipe = j.value("recipe", std::string());
  p.stage = j.value("stage", std::string());
  p.train_seed = j.value("train_seed", std::uint64_t{0});
  p.frozen_groups = j.value("frozen_groups", std::vector<std::string>{});
  p.lr_reset = j.value("lr_reset", true);
  const auto seed = j.find("init_seed");
  if (seed != j.end() && !seed->is_null()) {
    p.init_seed = seed->get<std::uint64_t>();
  } else {
    p.init_seed.reset();
  }
  p.parents.clear();
  if (j.contains("parents")) {
    for (const auto& q : j.at("parents")) p.parents.push_back(q.get<ProvenanceRecord>());
  }
}

Checkpoint Checkpoint::initialize(const model::ModelConfig& config, std::uint64_t seed, std::string src_vocab_hash,
                                  std::string tgt_vocab_hash, std::string recipe, std::string stage) {
  Checkpoint c;
  c.config = config;
  c.params = model::init_params<float>(config, seed);
  c.src_vocab_hash = std::move(src_vocab_hash);
  c.tgt_vocab_hash = std::move(tgt_vocab_hash);
  c.provenance.recipe = std::move(recipe);
  c.provenance.stage = std::move(stage);
  c.provenance.init_seed = seed;
  return c;
}

Checkpoint Checkpoint::clone() const {
  Checkpoint c;
  c.config = config;
  c.params = params.cast<float>();
  c.src_vocab_hash = src_vocab_hash;
  c.tgt_vocab_hash = tgt_vocab_hash;
  c.schedule = schedule;
  c.provenance = provenance;
  c.adapter = adapter;
  c.steps = steps;
  return c;
}

std::string group_hash(const model::ParamStore<float>& params, Group g) {
  Fnv1a h;
  for (const auto& e : params.entries()) {
    if (e.group != g) continue;
    h.update(e.name);
    for (auto d : e.var.value().shape()) h.update(&d, sizeof d);
    const auto& data = e.var.value().data();
    h.update(data.data(), data.size() * sizeof(float));
  }
  return h.hex();
}

std::string checkpoint_hash(const Checkpoint& c) { return content_hash(serialize_checkpoint(c)); }

std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json header;
  header["format"] = "pivotmt-checkpoint-v1";
  header["config"] = c.config;
  header["src_vocab_hash"] = c.src_vocab_hash;
  header["tgt_vocab_hash"] = c.tgt_vocab_hash;
  header["schedule"] = c.schedule;
  header["provenance"] = c.provenance;
  header["steps"] = c.steps;
  auto table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : c.params.entries()) {
    const auto key = file_key(e.name, e.group);
    const auto& v = e.var.value();
    const auto bytes = tensor_record_size(key, v.shape().size(), v.size(), sizeof(float));
    table.push_back({{"name", key}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  if (c.adapter) {
    const auto& a = *c.adapter;
    header["adapter"] = {{"pooling", adapter::to_string(a.pooling)},
                         {"provenance", adapter::to_string(a.provenance)},
                         {"orthogonality_error", a.orthogonality_error},
                         {"fit_residual", a.fit_residual}};
    const std::string key(kAdapterKey);
    const auto bytes = tensor_record_size(key, 2, a.m.size(), sizeof(double));
    table.push_back({{"name", key}, {"offset", offset}, {"bytes", bytes}});
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ostringstream out(std::ios::binary);
  binary::write_bytes(out, std::string(kMagic));
  binary::write<std::uint64_t>(out, text.size());
  binary::write_bytes(out, text);
  for (const auto& e : c.params.entries()) write_tensor(out, file_key(e.name, e.group), e.var.value());
  if (c.adapter) write_tensor(out, std::string(kAdapterKey), c.adapter->m);
  return std::move(out).str();
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& what) {
  std::istringstream in(bytes, std::ios::binary);
  if (binary::read_bytes(in, kMagic.size(), what) != kMagic) throw IoError(what + ": not a checkpoint (bad magic)");
  const auto header_len = binary::read<std::uint64_t>(in, what);
  if (header_len > bytes.size()) throw IoError(what + ": truncated file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(binary::read_bytes(in, static_cast<std::size_t>(header_len), what));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed header: " + e.what());
  }

  Checkpoint c;
  try {
    c.config = header.at("config").get<model::ModelConfig>();
    c.src_vocab_hash = header.at("src_vocab_hash").get<std::string>();
    c.tgt_vocab_hash = header.at("tgt_vocab_hash").get<std::string>();
    c.schedule = header.at("schedule").get<TrainSchedule>();
    c.provenance = header.at("provenance").get<ProvenanceRecord>();
    c.steps = header.value("steps", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed header: " + e.what());
  }
  c.config.validate();

  const auto table = header.at("tensors");
  const auto tensor_start = static_cast<std::size_t>(in.tellg());
  auto reference = model::init_params<float>(c.config, 0);
  std::size_t params_seen = 0;
  for (const auto& row : table) {
    const auto expected_offset = row.at("offset").get<std::size_t>();
    if (static_cast<std::size_t>(in.tellg()) - tensor_start != expected_offset) {
      throw IoError(what + ": tensor table offset mismatch at '" + row.at("name").get<std::string>() + "'");
    }
    auto raw = read_tensor(in, what);
    if (raw.key != row.at("name").get<std::string>()) throw IoError(what + ": tensor order differs from header");
    if (raw.key == kAdapterKey) {
      if (raw.dtype != kF64 || raw.shape.size() != 2 || raw.shape[0] != raw.shape[1] ||
          raw.shape[0] != c.config.model_dim) {
        throw ShapeError(what + ": adapter matrix must be a " + std::to_string(c.config.model_dim) + "x" +
                         std::to_string(c.config.model_dim) + " f64 tensor");
      }
      const auto& meta = header.at("adapter");
      adapter::AdapterMatrix a;
      a.m = Tensor<double>(raw.shape, std::move(raw.f64));
      a.m32 = a.m.cast<float>();
      a.pooling = adapter::pooling_from_string(meta.at("pooling").get<std::string>());
      const auto prov = meta.at("provenance").get<std::string>();
      a.provenance = prov == "procrustes" ? adapter::Provenance::procrustes
                     : prov == "random"   ? adapter::Provenance::random
                                          : adapter::Provenance::identity;
      a.orthogonality_error = meta.at("orthogonality_error").get<double>();
      a.fit_residual = meta.at("fit_residual").get<double>();
      c.adapter = std::move(a);
      continue;
    }
    if (raw.dtype != kF32) throw IoError(what + ": parameter '" + raw.key + "' is not f32");
    auto [group, name] = param_name(raw.key, what);
    if (!reference.contains(name)) throw ShapeError(what + ": unexpected parameter '" + name + "'");
    const auto& ref = reference.get(name).value();
    if (ref.shape() != raw.shape) {
      throw ShapeError(what + ": parameter '" + name + "' has shape " + tensor::shape_str(raw.shape) + ", config implies " +
                       tensor::shape_str(ref.shape()));
    }
    c.params.add(name, group, Tensor<float>(raw.shape, std::move(raw.f32)));
    ++params_seen;
  }
  if (params_seen != reference.entries().size()) {
    throw ShapeError(what + ": " + std::to_string(params_seen) + " parameters stored, config implies " +
                     std::to_string(reference.entries().size()));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(what + ": trailing bytes after tensors");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path.string());
}

}  // namespace pivotmt::training
