#include <sstream>

#include "mcae/binary_io.hpp"
#include "mcae/training.hpp"

namespace mcae::training {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'A', 'E'};

std::string shape_token(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& tok, std::size_t line) {
  if (tok == "scalar") return {};
  Shape s;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument("extent");
      s.push_back(v);
    } catch (const std::exception&) {
      throw ParseError("checkpoint header: bad shape '" + tok + "'", line);
    }
  }
  return s;
}

bool has_space(const std::string& s) {
  return s.empty() || s.find_first_of(" \t\r\n") != std::string::npos;
}

}  // namespace

const Checkpoint::Array* Checkpoint::find(const std::string& kind, const std::string& name) const {
  for (const auto& a : arrays)
    if (a.kind == kind && a.name == name) return &a;
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::string header = "mcae-checkpoint\n";
  for (const auto& [k, v] : ck.meta) {
    if (has_space(k) || has_space(v)) throw ValidationError("checkpoint meta entries must be single tokens: " + k);
    header += "meta " + k + " " + v + "\n";
  }
  header += "adam_step " + std::to_string(ck.adam_step) + "\n";
  std::size_t offset = 0;
  for (const auto& a : ck.arrays) {
    if (has_space(a.kind) || has_space(a.name)) throw ValidationError("checkpoint array names must be single tokens");
    header += "array " + a.kind + " " + a.name + " " + shape_token(a.value.shape) + " " + std::to_string(offset) +
              " " + std::to_string(a.value.size()) + "\n";
    offset += 4 * a.value.size();
  }
  io::ByteWriter w;
  w.text(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.text(header);
  for (const auto& a : ck.arrays)
    for (float v : a.value.data) w.f32(v);
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.text(4, "magic") != std::string(kMagic, 4)) throw ParseError("not a checkpoint (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t header_len = r.u32("header length");
  const std::size_t header_start = r.offset();
  const std::string header = r.text(header_len, "header");
  const std::size_t payload_start = r.offset();
  const std::size_t payload_size = r.remaining();

  Checkpoint ck;
  std::istringstream in(header);
  std::string line;
  std::size_t line_offset = header_start;
  bool first = true;
  std::size_t expected_offset = 0;
  while (std::getline(in, line)) {
    const std::size_t here = line_offset;
    line_offset += line.size() + 1;
    if (first) {
      if (line != "mcae-checkpoint") throw ParseError("checkpoint header: missing format line", here);
      first = false;
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string k, v;
      if (!(ls >> k >> v)) throw ParseError("checkpoint header: malformed meta line", here);
      ck.meta[k] = v;
    } else if (tag == "adam_step") {
      if (!(ls >> ck.adam_step) || ck.adam_step < 0) throw ParseError("checkpoint header: bad adam_step", here);
    } else if (tag == "array") {
      Checkpoint::Array a;
      std::string shape_tok;
      std::size_t off = 0, count = 0;
      if (!(ls >> a.kind >> a.name >> shape_tok >> off >> count)) {
        throw ParseError("checkpoint header: malformed array line", here);
      }
      const Shape shape = parse_shape(shape_tok, here);
      if (diffcore::shape_size(shape) != count) throw ParseError("checkpoint header: count does not match shape", here);
      if (off != expected_offset) throw ParseError("checkpoint header: non-contiguous array offsets", here);
      if (off + 4 * count > payload_size) {
        throw ParseError("checkpoint truncated in array " + a.name, payload_start + payload_size);
      }
      std::vector<float> values(count);
      io::ByteReader pr(bytes.subspan(payload_start + off, 4 * count));
      for (auto& v : values) v = pr.f32("array");
      a.value = Tensor<float>(shape, std::move(values));
      ck.arrays.push_back(std::move(a));
      expected_offset = off + 4 * count;
    } else if (!tag.empty()) {
      throw ParseError("checkpoint header: unknown entry '" + tag + "'", here);
    }
  }
  if (first) throw ParseError("checkpoint header is empty", header_start);
  if (expected_offset != payload_size) {
    throw ParseError("checkpoint payload has " + std::to_string(payload_size - expected_offset) + " unexpected bytes",
                     payload_start + expected_offset);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  // write-then-rename keeps the previous checkpoint intact on failure
  const auto bytes = serialize_checkpoint(ck);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return deserialize_checkpoint(bytes);
}

Checkpoint snapshot(const ParamStore<float>& store, const diffcore::AdamState<float>* adam,
                    std::map<std::string, std::string> meta) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  const auto params = store.params();
  for (const auto* p : params) ck.arrays.push_back({"param", p->name, p->value});
  for (const auto* b : store.buffers()) ck.arrays.push_back({"buffer", b->name, b->value});
  if (adam && adam->first_moment.size() == params.size()) {
    ck.adam_step = adam->step;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.arrays.push_back({"adam_m", params[i]->name, adam->first_moment[i]});
      ck.arrays.push_back({"adam_v", params[i]->name, adam->second_moment[i]});
    }
  }
  return ck;
}

namespace {

void copy_into(const Checkpoint& ck, const std::string& kind, const std::string& name, Tensor<float>& dst) {
  const auto* a = ck.find(kind, name);
  if (!a) throw ConfigError("checkpoint is missing " + kind + " " + name);
  if (a->value.shape != dst.shape) {
    throw ConfigError("checkpoint " + kind + " " + name + " has shape " + diffcore::shape_str(a->value.shape) +
                      ", model expects " + diffcore::shape_str(dst.shape));
  }
  dst.data = a->value.data;
}

}  // namespace

void restore(const Checkpoint& ck, ParamStore<float>& store, diffcore::AdamState<float>* adam) {
  const auto params = store.params();
  for (auto* p : params) copy_into(ck, "param", p->name, p->value);
  for (auto* b : store.buffers()) copy_into(ck, "buffer", b->name, b->value);
  if (adam) {
    *adam = diffcore::AdamState<float>(params);
    if (ck.find("adam_m", params.empty() ? "" : params[0]->name)) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        copy_into(ck, "adam_m", params[i]->name, adam->first_moment[i]);
        copy_into(ck, "adam_v", params[i]->name, adam->second_moment[i]);
      }
      adam->step = ck.adam_step;
    }
  }
  std::size_t model_arrays = 0;
  for (const auto& a : ck.arrays)
    if (a.kind == "param" || a.kind == "buffer") ++model_arrays;
  if (model_arrays != params.size() + store.buffers().size()) {
    throw ConfigError("checkpoint holds " + std::to_string(model_arrays) + " model arrays, model has " +
                      std::to_string(params.size() + store.buffers().size()));
  }
}

Checkpoint model_checkpoint(const Mcae<float>& model, const TrainConfig& config, const diffcore::AdamState<float>* adam) {
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : config_entries(config)) meta["cfg." + k] = v;
  meta["kind"] = "mcae";
  return snapshot(model.store(), adam, meta);
}

TrainConfig checkpoint_config(const Checkpoint& ck) {
  TrainConfig c;
  auto it = ck.meta.find("cfg.preset");
  if (it != ck.meta.end()) c = preset_config(it->second);
  for (const auto& [k, v] : ck.meta) {
    if (k.rfind("cfg.", 0) != 0 || k == "cfg.preset") continue;
    apply_entry(c, k.substr(4), v);
  }
  c.validate();
  return c;
}

std::unique_ptr<Mcae<float>> model_from_checkpoint(const Checkpoint& ck) {
  auto kind = ck.meta.find("kind");
  if (kind != ck.meta.end() && kind->second != "mcae") {
    throw ConfigError("checkpoint holds a '" + kind->second + "' model, not an MCAE");
  }
  const TrainConfig c = checkpoint_config(ck);
  auto model = std::make_unique<Mcae<float>>(c.model, 0);
  restore(ck, model->store());
  return model;
}

}  // namespace mcae::training
