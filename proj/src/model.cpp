#include "eeglrp/model.hpp"

#include <cmath>

namespace eeglrp {

namespace {
constexpr int kStemKernel1 = 15;
constexpr int kStemStride1 = 8;
constexpr int kStemKernel23 = 3;
}  // namespace

int ModelConfig::stem_out_len() const {
  const int t1 = (patch_len() - kStemKernel1) / kStemStride1 + 1;
  const int t2 = t1 - kStemKernel23 + 1;
  return t2 - kStemKernel23 + 1;
}

void ModelConfig::validate() const {
  if (n_channels < 1 || n_patches < 1 || embed_dim < 1 || n_layers < 0 || n_heads < 1)
    throw ConfigError("model dimensions must be positive");
  if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
  for (double p : {dropout_p, attn_dropout_p, stochastic_depth_max})
    if (p < 0.0 || p >= 1.0) throw ConfigError("drop probabilities must lie in [0, 1)");
  if (patch_len() < kStemKernel1) throw ConfigError("patch too short for the conv stem");
  if (head_kind == HeadKind::Mlp && (head_hidden < 1 || head_layers < 1))
    throw ConfigError("MLP head needs at least one hidden layer and unit");
}

int64_t ModelConfig::parameter_count(bool include_pretrain_head) const {
  const int64_t s = stem_channels, d = embed_dim, so = stem_out_len();
  const int64_t h = mlp_hidden(), L = patch_len();
  const int64_t bias = with_biases ? 1 : 0;
  int64_t stem = s * kStemKernel1 + bias * s;                       // conv1
  stem += 2 * (s * s * kStemKernel23 + bias * s);                   // conv2, conv3
  if (use_layer_norm) {
    const int64_t t1 = (patch_len() - kStemKernel1) / kStemStride1 + 1;
    stem += 2 * (t1 + (t1 - kStemKernel23 + 1) + so);               // stem norms over time
  }
  stem += d * (s * so) + bias * d;                                  // token projection
  int64_t enc = d + static_cast<int64_t>(n_channels) * d + static_cast<int64_t>(n_patches) * d;
  int64_t layer = 4 * (d * d + bias * d);                           // q,k,v,out
  layer += 2 * (h * d) + bias * (h + d);                            // mlp
  if (use_layer_norm) layer += 4 * d;                               // ln1, ln2
  int64_t total = stem + enc + n_layers * layer;
  if (use_layer_norm) total += 2 * d;                               // final norm
  switch (head_kind) {
    case HeadKind::Linear: total += d + bias; break;
    case HeadKind::Segmentation: total += d + L * d + bias * L; break;
    case HeadKind::Mlp: {
      total += static_cast<int64_t>(head_hidden) * d + bias * head_hidden;
      for (int i = 1; i < head_layers; ++i)
        total += static_cast<int64_t>(head_hidden) * head_hidden + bias * head_hidden;
      total += head_hidden + bias;
      break;
    }
  }
  if (include_pretrain_head) total += d + L * d + bias * L;
  return total;
}

struct Model::Ctx {
  const ForwardOptions& opts;
  std::map<std::string, Var> leaves;
};

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int s = cfg_.stem_channels, d = cfg_.embed_dim;
  auto add_bias = [&](const std::string& name, int n) {
    if (cfg_.with_biases) register_param(name, Tensor({n}));
  };
  register_param("stem.conv1.w", Tensor({s, 1, kStemKernel1}));
  add_bias("stem.conv1.b", s);
  register_param("stem.conv2.w", Tensor({s, s, kStemKernel23}));
  add_bias("stem.conv2.b", s);
  register_param("stem.conv3.w", Tensor({s, s, kStemKernel23}));
  add_bias("stem.conv3.b", s);
  if (cfg_.use_layer_norm) {
    const int t1 = (cfg_.patch_len() - kStemKernel1) / kStemStride1 + 1;
    const int lens[3] = {t1, t1 - kStemKernel23 + 1, t1 - 2 * (kStemKernel23 - 1)};
    for (int i = 1; i <= 3; ++i) {
      register_param("stem.norm" + std::to_string(i) + ".g", Tensor::full({lens[i - 1]}, 1.0));
      register_param("stem.norm" + std::to_string(i) + ".b", Tensor({lens[i - 1]}));
    }
  }
  register_param("stem.proj.w", Tensor({d, s * cfg_.stem_out_len()}));
  add_bias("stem.proj.b", d);
  register_param("enc.cls", Tensor({1, d}));
  register_param("enc.channel", Tensor({cfg_.n_channels, d}));
  register_param("enc.temporal", Tensor({cfg_.n_patches, d}));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    if (cfg_.use_layer_norm) {
      register_param(pre + "ln1.g", Tensor::full({d}, 1.0));
      register_param(pre + "ln1.b", Tensor({d}));
    }
    for (const char* nm : {"wq", "wk", "wv", "wo"}) {
      register_param(pre + "attn." + nm, Tensor({d, d}));
      add_bias(pre + "attn.b" + std::string(1, nm[1]), d);
    }
    if (cfg_.use_layer_norm) {
      register_param(pre + "ln2.g", Tensor::full({d}, 1.0));
      register_param(pre + "ln2.b", Tensor({d}));
    }
    register_param(pre + "mlp.w1", Tensor({cfg_.mlp_hidden(), d}));
    add_bias(pre + "mlp.b1", cfg_.mlp_hidden());
    register_param(pre + "mlp.w2", Tensor({d, cfg_.mlp_hidden()}));
    add_bias(pre + "mlp.b2", d);
  }
  if (cfg_.use_layer_norm) {
    register_param("final_ln.g", Tensor::full({d}, 1.0));
    register_param("final_ln.b", Tensor({d}));
  }
  switch (cfg_.head_kind) {
    case HeadKind::Linear:
      register_param("head.w", Tensor({1, d}));
      add_bias("head.b", 1);
      break;
    case HeadKind::Segmentation:
      register_param("head.pool.u", Tensor({1, d}));
      register_param("head.w", Tensor({cfg_.patch_len(), d}));
      add_bias("head.b", cfg_.patch_len());
      break;
    case HeadKind::Mlp: {
      int in = d;
      for (int i = 0; i < cfg_.head_layers; ++i) {
        const std::string pre = "head.l" + std::to_string(i) + ".";
        register_param(pre + "w", Tensor({cfg_.head_hidden, in}));
        add_bias(pre + "b", cfg_.head_hidden);
        in = cfg_.head_hidden;
      }
      register_param("head.out.w", Tensor({1, in}));
      add_bias("head.out.b", 1);
      break;
    }
  }
}

void Model::register_param(const std::string& name, Tensor t) {
  params_.emplace(name, std::move(t));
  names_.push_back(name);
}

void Model::init(uint64_t seed) {
  Rng rng(seed);
  for (const auto& name : names_) {
    Tensor& t = params_.at(name);
    const bool is_gain = name.ends_with(".g");
    const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") ||
                         name.ends_with(".bq") || name.ends_with(".bk") || name.ends_with(".bv") ||
                         name.ends_with(".bo");
    if (is_gain) {
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0;
    } else if (is_bias) {
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.0;
    } else {
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.trunc_gaussian(0.02);
    }
  }
}

Tensor& Model::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

bool Model::has_param(const std::string& name) const { return params_.count(name) > 0; }

void Model::add_pretrain_params(uint64_t seed) {
  if (has_pretrain_params()) return;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  Tensor mask({cfg_.embed_dim});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.trunc_gaussian(0.02);
  register_param("pre.mask", std::move(mask));
  Tensor rw({cfg_.patch_len(), cfg_.embed_dim});
  for (int64_t i = 0; i < rw.numel(); ++i) rw[i] = rng.trunc_gaussian(0.02);
  register_param("pre.recon.w", std::move(rw));
  if (cfg_.with_biases) register_param("pre.recon.b", Tensor({cfg_.patch_len()}));
}

bool Model::is_head_param(const std::string& name) { return name.starts_with("head."); }
bool Model::is_pretrain_param(const std::string& name) { return name.starts_with("pre."); }

Checkpoint Model::to_checkpoint(Provenance prov) const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.provenance = prov;
  for (const auto& name : names_) ck.params.emplace_back(name, params_.at(name));
  return ck;
}

Model Model::from_checkpoint(const Checkpoint& ck) {
  Model m(ck.config);
  bool pre = false;
  for (const auto& [name, t] : ck.params)
    if (is_pretrain_param(name)) pre = true;
  if (pre) m.add_pretrain_params(0);
  size_t seen = 0;
  for (const auto& [name, t] : ck.params) {
    if (!m.has_param(name))
      throw ConfigError("checkpoint parameter " + name + " not in architecture");
    Tensor& dst = m.param(name);
    if (!dst.same_shape(t))
      throw ConfigError("checkpoint parameter " + name + " has shape " + t.shape_str() +
                        ", expected " + dst.shape_str());
    dst = t;
    ++seen;
  }
  if (seen != m.names_.size())
    throw ConfigError("checkpoint is missing parameters (" + std::to_string(seen) + " of " +
                      std::to_string(m.names_.size()) + ")");
  return m;
}

void Model::load_backbone(const Checkpoint& ck) {
  for (const auto& [name, t] : ck.params) {
    if (is_head_param(name) || is_pretrain_param(name)) continue;
    if (!has_param(name))
      throw ConfigError("pretrained checkpoint has unknown backbone parameter " + name);
    Tensor& dst = param(name);
    if (!dst.same_shape(t))
      throw ConfigError("backbone parameter " + name + " shape mismatch: " + t.shape_str() +
                        " vs " + dst.shape_str());
    dst = t;
  }
}

Var Model::p(Ctx& c, const std::string& name) const {
  auto it = c.leaves.find(name);
  if (it != c.leaves.end()) return it->second;
  auto pit = params_.find(name);
  if (pit == params_.end()) return Var{};  // absent optional (bias-free model)
  bool rg = false;
  switch (c.opts.grad) {
    case GradScope::None: rg = false; break;
    case GradScope::All: rg = true; break;
    case GradScope::HeadOnly: rg = is_head_param(name); break;
  }
  Var v = leaf_ref(&pit->second, rg);
  c.leaves.emplace(name, v);
  return v;
}

Var Model::dropout(Ctx& c, const Var& x, double prob) const {
  if (!c.opts.train_mode || prob <= 0.0) return x;
  if (!c.opts.rng) throw StateError("train-mode forward needs an rng");
  const double keep = 1.0 - prob;
  Tensor mask(x->value().shape());
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = c.opts.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  return mul_mask(x, std::move(mask));
}

Var Model::stem(Ctx& c, const Var& window) const {
  const int C = cfg_.n_channels, P = cfg_.n_patches, L = cfg_.patch_len();
  // channel-wise non-overlapping 1 s patches; contiguous split, so a reshape
  Var x = reshape(window, {C * P, 1, L});
  // norms run over the time axis so within-patch amplitude contrast survives
  auto block = [&](const Var& in, const char* conv, const char* norm, int stride) {
    Var y = conv1d(in, p(c, std::string("stem.") + conv + ".w"),
                   p(c, std::string("stem.") + conv + ".b"), stride, Rule::Gamma);
    if (std::string(conv) == "conv1") y->mark_input_layer();
    if (cfg_.use_layer_norm)
      y = layer_norm(y, p(c, std::string("stem.") + norm + ".g"),
                     p(c, std::string("stem.") + norm + ".b"));
    return gelu(y);
  };
  x = block(x, "conv1", "norm1", kStemStride1);
  x = block(x, "conv2", "norm2", 1);
  x = block(x, "conv3", "norm3", 1);
  x = reshape(x, {C * P, cfg_.stem_channels * cfg_.stem_out_len()});
  return linear(x, p(c, "stem.proj.w"), p(c, "stem.proj.b"), Rule::Epsilon);
}

Var Model::encoder_layer(Ctx& c, const Var& x, int layer) const {
  const std::string pre = "blocks." + std::to_string(layer) + ".";
  const int N = x->value().dim(0), d = cfg_.embed_dim;
  const int H = cfg_.n_heads, dh = d / H;

  Var h = cfg_.use_layer_norm ? layer_norm(x, p(c, pre + "ln1.g"), p(c, pre + "ln1.b")) : x;
  auto heads = [&](const char* w, const char* b) {
    Var t = linear(h, p(c, pre + "attn." + w), p(c, pre + "attn." + b), Rule::Epsilon);
    return permute3(reshape(t, {N, H, dh}), 1, 0, 2);  // [H,N,dh]
  };
  Var qh = heads("wq", "bq");
  Var kh = heads("wk", "bk");
  Var vh = heads("wv", "bv");
  Var scores = scale(matmul(qh, permute3(kh, 0, 2, 1), Rule::Bilinear), 1.0 / std::sqrt(dh));
  Var probs = dropout(c, softmax(scores), cfg_.attn_dropout_p);
  Var ctx = matmul(probs, vh, Rule::Bilinear);
  ctx = reshape(permute3(ctx, 1, 0, 2), {N, d});
  Var attn_out = dropout(c, linear(ctx, p(c, pre + "attn.wo"), p(c, pre + "attn.bo"), Rule::Epsilon),
                         cfg_.dropout_p);
  Var x1 = add(x, attn_out);

  Var m = cfg_.use_layer_norm ? layer_norm(x1, p(c, pre + "ln2.g"), p(c, pre + "ln2.b")) : x1;
  Var h1 = dropout(c, gelu(linear(m, p(c, pre + "mlp.w1"), p(c, pre + "mlp.b1"), Rule::Epsilon)),
                   cfg_.dropout_p);
  Var h2 = dropout(c, linear(h1, p(c, pre + "mlp.w2"), p(c, pre + "mlp.b2"), Rule::Epsilon),
                   cfg_.dropout_p);
  return add(x1, h2);
}

Var Model::encode(Ctx& c, const Var& tokens) const {
  const int C = cfg_.n_channels, P = cfg_.n_patches;
  std::vector<int> idx_ch(static_cast<size_t>(C * P)), idx_tp(static_cast<size_t>(C * P));
  for (int i = 0; i < C * P; ++i) {
    idx_ch[static_cast<size_t>(i)] = i / P;
    idx_tp[static_cast<size_t>(i)] = i % P;
  }
  Var t = add(tokens, embed_rows(p(c, "enc.channel"), idx_ch));
  t = add(t, embed_rows(p(c, "enc.temporal"), idx_tp));
  Var x = concat_rows({p(c, "enc.cls"), t});
  for (int l = 0; l < cfg_.n_layers; ++l) {
    if (c.opts.train_mode && cfg_.n_layers > 0) {
      double pb = c.opts.bypass_probs
                      ? (*c.opts.bypass_probs)[static_cast<size_t>(l)]
                      : bypass_prob(l, cfg_.n_layers, cfg_.stochastic_depth_max);
      if (pb > 0.0) {
        if (!c.opts.rng) throw StateError("train-mode forward needs an rng");
        if (c.opts.rng->bernoulli(pb)) continue;  // layer bypassed via its skip connection
      }
    }
    x = encoder_layer(c, x, l);
  }
  if (cfg_.use_layer_norm) x = layer_norm(x, p(c, "final_ln.g"), p(c, "final_ln.b"));
  return x;
}

Var Model::head(Ctx& c, const Var& tokens) const {
  const int C = cfg_.n_channels, P = cfg_.n_patches;
  switch (cfg_.head_kind) {
    case HeadKind::Linear: {
      Var cls = slice_rows(tokens, 0, 1);
      return reshape(linear(cls, p(c, "head.w"), p(c, "head.b"), Rule::Epsilon), {1});
    }
    case HeadKind::Mlp: {
      Var cur = slice_rows(tokens, 0, 1);
      for (int i = 0; i < cfg_.head_layers; ++i) {
        const std::string pre = "head.l" + std::to_string(i) + ".";
        cur = gelu(linear(cur, p(c, pre + "w"), p(c, pre + "b"), Rule::Epsilon));
      }
      return reshape(linear(cur, p(c, "head.out.w"), p(c, "head.out.b"), Rule::Epsilon), {1});
    }
    case HeadKind::Segmentation: {
      // learned channel-attention pooling per patch keeps relevance flowing
      // to the tokens the head actually reads
      const int d = cfg_.embed_dim;
      Var tok = slice_rows(tokens, 1, 1 + C * P);
      Var scores = linear(tok, p(c, "head.pool.u"), Var{}, Rule::Epsilon);  // [C*P, 1]
      Var a = softmax(permute3(reshape(scores, {C, P, 1}), 1, 2, 0));       // [P, 1, C]
      Var tok3 = permute3(reshape(tok, {C, P, d}), 1, 0, 2);                // [P, C, d]
      Var pooled = reshape(matmul(a, tok3, Rule::Bilinear), {P, d});
      Var logits = linear(pooled, p(c, "head.w"), p(c, "head.b"), Rule::Epsilon);  // [P, L]
      return reshape(logits, {cfg_.t_in()});
    }
  }
  throw ConfigError("unknown head kind");
}

Forward Model::forward(const Tensor& window, const ForwardOptions& opts) const {
  if (window.rank() != 2 || window.dim(0) != cfg_.n_channels || window.dim(1) != cfg_.t_in())
    throw ShapeError("window shape " + window.shape_str() + " does not match model input [" +
                     std::to_string(cfg_.n_channels) + "," + std::to_string(cfg_.t_in()) + "]");
  if (window.dim(1) % cfg_.patch_len() != 0)
    throw ShapeError("t_in not divisible by patch length");
  if (!window.all_finite()) throw InputError("window contains non-finite values");
  if (opts.bypass_probs && static_cast<int>(opts.bypass_probs->size()) != cfg_.n_layers)
    throw ConfigError("bypass_probs size must equal n_layers");

  Ctx c{opts, {}};
  Forward f;
  f.input = leaf(window, opts.explain);
  f.stem_tokens = stem(c, f.input);
  f.encoded = encode(c, f.stem_tokens);
  f.output = head(c, f.encoded);
  f.param_leaves = std::move(c.leaves);
  return f;
}

void Model::restore(const std::map<std::string, Tensor>& snap) {
  for (const auto& [name, t] : snap) param(name) = t;
}

MaskedForward Model::forward_masked(const Tensor& window, const std::vector<int>& masked_tokens,
                                    const ForwardOptions& opts) const {
  if (!has_pretrain_params()) throw StateError("pretrain parameters not initialized");
  const int C = cfg_.n_channels, P = cfg_.n_patches, L = cfg_.patch_len(), d = cfg_.embed_dim;
  const int Nt = C * P;
  for (int m : masked_tokens)
    if (m < 0 || m >= Nt) throw InputError("masked token index out of range");

  Ctx c{opts, {}};
  Var input = leaf(window, false);
  Var tokens = stem(c, input);

  Tensor keep({Nt, d});
  Tensor inv({Nt, d});
  for (int i = 0; i < Nt; ++i)
    for (int j = 0; j < d; ++j) keep.at(i, j) = 1.0;
  for (int m : masked_tokens)
    for (int j = 0; j < d; ++j) {
      keep.at(m, j) = 0.0;
      inv.at(m, j) = 1.0;
    }
  Var masked = add(mul_mask(tokens, keep), mul_mask(broadcast_rows(p(c, "pre.mask"), Nt), inv));

  Var enc = encode(c, masked);
  Var rows = slice_rows(enc, 1, 1 + Nt);
  Var recon = linear(rows, p(c, "pre.recon.w"), p(c, "pre.recon.b"), Rule::Epsilon);  // [Nt, L]

  Tensor target = window.reshaped({Nt, L});
  Tensor maskw({Nt, L});
  for (int m : masked_tokens)
    for (int j = 0; j < L; ++j) maskw.at(m, j) = 1.0;
  MaskedForward mf;
  mf.loss = mse_loss(recon, std::move(target), std::move(maskw));
  mf.input = input;
  mf.param_leaves = std::move(c.leaves);
  return mf;
}

}  // namespace eeglrp
