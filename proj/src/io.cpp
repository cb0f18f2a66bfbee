#include "eeglrp/io.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace eeglrp {

namespace {

using nlohmann::json;

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& s, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(s, v);
}
void put_f32(std::string& s, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(s, v);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("container truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  float f32() {
    const uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void write_container(const std::string& path, const char magic[8], const json& header,
                     const std::string& payload) {
  std::string out(magic, 8);
  put_u32(out, 1);  // format version
  const std::string h = header.dump();
  put_u64(out, h.size());
  out += h;
  out += payload;
  write_text_file(path, out);
}

std::pair<json, std::string> read_container(const std::string& path, const char magic[8]) {
  const std::string buf = read_text_file(path);
  if (buf.size() < 20 || buf.compare(0, 8, magic, 8) != 0)
    throw IoError(path + " is not a " + std::string(magic, 8) + " container");
  Reader r{buf, 8};
  const uint32_t version = r.u32();
  if (version != 1) throw IoError("unsupported container version " + std::to_string(version));
  const uint64_t hlen = r.u64();
  const std::string htext = r.bytes(hlen);
  json header = json::parse(htext);
  return {std::move(header), buf.substr(r.pos)};
}

json montage_to_json(const Montage& m) {
  json j;
  j["names"] = m.names;
  json coords = json::array();
  for (const auto& [x, y] : m.coords) coords.push_back({x, y});
  j["coords"] = coords;
  return j;
}

Montage montage_from_json(const json& j) {
  Montage m;
  m.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& c : j.at("coords")) m.coords.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
  m.validate();
  return m;
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["n_channels"] = c.n_channels;
  j["sample_rate"] = c.sample_rate;
  j["patch_seconds"] = c.patch_seconds;
  j["n_patches"] = c.n_patches;
  j["embed_dim"] = c.embed_dim;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["mlp_ratio"] = c.mlp_ratio;
  j["dropout_p"] = c.dropout_p;
  j["attn_dropout_p"] = c.attn_dropout_p;
  j["stochastic_depth_max"] = c.stochastic_depth_max;
  j["stem_channels"] = c.stem_channels;
  j["with_biases"] = c.with_biases;
  j["use_layer_norm"] = c.use_layer_norm;
  j["head_kind"] = c.head_kind == HeadKind::Linear ? "linear"
                   : c.head_kind == HeadKind::Mlp ? "mlp"
                                                  : "segmentation";
  j["head_hidden"] = c.head_hidden;
  j["head_layers"] = c.head_layers;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_channels = j.at("n_channels").get<int>();
  c.sample_rate = j.at("sample_rate").get<int>();
  c.patch_seconds = j.at("patch_seconds").get<int>();
  c.n_patches = j.at("n_patches").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.attn_dropout_p = j.at("attn_dropout_p").get<double>();
  c.stochastic_depth_max = j.at("stochastic_depth_max").get<double>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.with_biases = j.at("with_biases").get<bool>();
  c.use_layer_norm = j.at("use_layer_norm").get<bool>();
  const std::string head = j.at("head_kind").get<std::string>();
  c.head_kind = head == "linear" ? HeadKind::Linear
                : head == "mlp" ? HeadKind::Mlp
                                : HeadKind::Segmentation;
  c.head_hidden = j.at("head_hidden").get<int>();
  c.head_layers = j.at("head_layers").get<int>();
  return c;
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

void save_recording(const Recording& rec, const std::string& path) {
  rec.validate();
  json h;
  h["n_channels"] = rec.n_channels();
  h["n_samples"] = rec.n_samples();
  h["sample_rate"] = rec.sample_rate;
  h["montage"] = montage_to_json(rec.montage);
  json ev = json::array();
  for (const auto& e : rec.events) ev.push_back({e.sample, e.label});
  h["events"] = ev;
  if (rec.continuous_target) {
    h["target"] = {{"name", rec.continuous_target->name},
                   {"values", rec.continuous_target->values}};
  } else {
    h["target"] = nullptr;
  }
  std::string payload;
  payload.reserve(static_cast<size_t>(rec.data.numel()) * 4);
  for (int64_t i = 0; i < rec.data.numel(); ++i)
    put_f32(payload, static_cast<float>(rec.data[i]));
  write_container(path, "EEGLRPRC", h, payload);
}

Recording load_recording(const std::string& path) {
  auto [h, payload] = read_container(path, "EEGLRPRC");
  Recording rec;
  const int c = h.at("n_channels").get<int>();
  const int64_t n = h.at("n_samples").get<int64_t>();
  rec.sample_rate = h.at("sample_rate").get<double>();
  rec.montage = montage_from_json(h.at("montage"));
  for (const auto& e : h.at("events"))
    rec.events.push_back({e.at(0).get<int64_t>(), e.at(1).get<std::string>()});
  if (!h.at("target").is_null())
    rec.continuous_target = ContinuousTarget{
        h["target"].at("name").get<std::string>(),
        h["target"].at("values").get<std::vector<double>>()};
  if (payload.size() != static_cast<size_t>(c) * static_cast<size_t>(n) * 4)
    throw IoError("recording payload size mismatch");
  rec.data = Tensor({c, static_cast<int>(n)});
  Reader r{payload, 0};
  for (int64_t i = 0; i < rec.data.numel(); ++i) rec.data[i] = static_cast<double>(r.f32());
  rec.validate();
  return rec;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  json h;
  h["config"] = config_to_json(ck.config);
  h["provenance"] = {{"seed", ck.provenance.seed},
                     {"epochs_run", ck.provenance.epochs_run},
                     {"best_val_bac", ck.provenance.best_val_bac}};
  json tensors = json::array();
  std::string payload;
  for (const auto& [name, t] : ck.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
    for (int64_t i = 0; i < t.numel(); ++i) put_f64(payload, t[i]);
  }
  h["tensors"] = tensors;
  write_container(path, "EEGLRPCK", h, payload);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto [h, payload] = read_container(path, "EEGLRPCK");
  Checkpoint ck;
  ck.config = config_from_json(h.at("config"));
  ck.provenance.seed = h.at("provenance").at("seed").get<uint64_t>();
  ck.provenance.epochs_run = h.at("provenance").at("epochs_run").get<int>();
  ck.provenance.best_val_bac = h.at("provenance").at("best_val_bac").get<double>();
  Reader r{payload, 0};
  for (const auto& tj : h.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.f64();
    ck.params.emplace_back(name, std::move(t));
  }
  return ck;
}

void save_attribution(const AttributionResult& res, const std::string& path) {
  json h;
  h["window_id"] = res.window_id;
  json logits = json::array();
  for (const auto& l : res.logits)
    logits.push_back({{"index", l.index}, {"value", l.value}, {"predicted", l.predicted},
                      {"target", l.target}});
  h["logits"] = logits;
  json shapes = json::array();
  std::string payload;
  for (const auto& m : res.maps) {
    shapes.push_back(m.shape());
    for (int64_t i = 0; i < m.numel(); ++i) put_f64(payload, m[i]);
  }
  h["map_shapes"] = shapes;
  write_container(path, "EEGLRPAT", h, payload);
}

AttributionResult load_attribution(const std::string& path) {
  auto [h, payload] = read_container(path, "EEGLRPAT");
  AttributionResult res;
  res.window_id = h.at("window_id").get<int>();
  for (const auto& l : h.at("logits")) {
    LogitRecord rec;
    rec.index = l.at("index").get<int>();
    rec.value = l.at("value").get<double>();
    rec.predicted = l.at("predicted").get<int>();
    rec.target = l.at("target").get<int>();
    res.logits.push_back(rec);
  }
  Reader r{payload, 0};
  for (const auto& sj : h.at("map_shapes")) {
    Tensor t(sj.get<std::vector<int>>());
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.f64();
    res.maps.push_back(std::move(t));
  }
  return res;
}

void save_aggregate(const AggregatePattern& p, const std::string& path) {
  json h;
  h["n_contributing_maps"] = p.n_contributing_maps;
  h["task"] = p.task;
  h["configuration"] = p.configuration;
  h["seed"] = p.seed;
  h["montage"] = montage_to_json(p.montage);
  h["shape"] = p.signed_map.shape();
  std::string payload;
  for (int64_t i = 0; i < p.signed_map.numel(); ++i) put_f64(payload, p.signed_map[i]);
  for (int64_t i = 0; i < p.absolute_map.numel(); ++i) put_f64(payload, p.absolute_map[i]);
  write_container(path, "EEGLRPAG", h, payload);
}

AggregatePattern load_aggregate(const std::string& path) {
  auto [h, payload] = read_container(path, "EEGLRPAG");
  AggregatePattern p;
  p.n_contributing_maps = h.at("n_contributing_maps").get<int>();
  p.task = h.at("task").get<std::string>();
  p.configuration = h.at("configuration").get<std::string>();
  p.seed = h.at("seed").get<uint64_t>();
  p.montage = montage_from_json(h.at("montage"));
  const std::vector<int> shape = h.at("shape").get<std::vector<int>>();
  p.signed_map = Tensor(shape);
  p.absolute_map = Tensor(shape);
  Reader r{payload, 0};
  for (int64_t i = 0; i < p.signed_map.numel(); ++i) p.signed_map[i] = r.f64();
  for (int64_t i = 0; i < p.absolute_map.numel(); ++i) p.absolute_map[i] = r.f64();
  return p;
}

}  // namespace eeglrp
