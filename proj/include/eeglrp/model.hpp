#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eeglrp/graph.hpp"
#include "eeglrp/rng.hpp"

namespace eeglrp {

enum class HeadKind { Linear, Mlp, Segmentation };

/// Architecture of the scaled-down channel-patch EEG Transformer.
///
/// Parameter count (backbone, with biases):
///   stem  = s*ks1 + s + 2*(s*s*3 + s) + 2*(t1 + t2 + t3) + d*(s*stem_out) + d
///   enc   = d + C*d + P*d                      (CLS + channel + temporal)
///   layer = 4*(d*d + d) + 4*d + 2*(h*d) + h + d + 2*d   with h = ratio*d
///   total = stem + enc + L*layer + 2*d + head
/// where s = stem_channels, d = embed_dim, C = n_channels, P = n_patches,
/// stem_out is the flattened conv output length, heads as declared.
struct ModelConfig {
  int n_channels = 8;
  int sample_rate = 200;   // Hz
  int patch_seconds = 1;   // patch_len = sample_rate * patch_seconds
  int n_patches = 4;       // t_in = n_patches * patch_len
  int embed_dim = 64;
  int n_layers = 4;
  int n_heads = 4;
  double mlp_ratio = 4.0;
  double dropout_p = 0.0;
  double attn_dropout_p = 0.0;
  double stochastic_depth_max = 0.0;
  int stem_channels = 8;
  bool with_biases = true;     // false builds a bias-free model (diagnostics)
  bool use_layer_norm = true;  // false removes all norms (diagnostics)
  HeadKind head_kind = HeadKind::Linear;
  int head_hidden = 64;
  int head_layers = 2;  // hidden layers in the MLP head

  int patch_len() const { return sample_rate * patch_seconds; }
  int t_in() const { return n_patches * patch_len(); }
  int n_tokens() const { return n_channels * n_patches; }
  int mlp_hidden() const { return static_cast<int>(mlp_ratio * embed_dim); }
  /// Flattened length of the conv-stem output for one patch.
  int stem_out_len() const;
  int64_t parameter_count(bool include_pretrain_head = false) const;

  void validate() const;
};

/// Training provenance carried inside a checkpoint.
struct Provenance {
  uint64_t seed = 0;
  int epochs_run = 0;
  double best_val_bac = 0.0;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> params;  // insertion order preserved
  Provenance provenance;
};

enum class GradScope { None, All, HeadOnly };

struct ForwardOptions {
  bool train_mode = false;
  Rng* rng = nullptr;        // required when train_mode and any drop prob > 0
  bool explain = false;      // request input-level adjoints
  GradScope grad = GradScope::None;
  /// Test hook: explicit per-layer bypass probabilities for stochastic depth.
  const std::vector<double>* bypass_probs = nullptr;
};

struct Forward {
  Var output;      // [1] logit or [t_in] logits
  Var input;       // leaf of the raw window
  Var stem_tokens; // [n_tokens, embed_dim] before CLS/encodings
  Var encoded;     // [1 + n_tokens, embed_dim] after the encoder
  std::map<std::string, Var> param_leaves;
};

struct MaskedForward {
  Var loss;
  Var input;
  std::map<std::string, Var> param_leaves;
};

/// The mini channel-patch EEG Transformer, expressed entirely in graph ops so
/// that both reverse modes apply. Immutable during inference.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  /// Fresh truncated-normal(0.02) initialization; gains 1, biases 0.
  void init(uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  std::vector<std::string> param_names() const { return names_; }

  /// Ensure the masked-reconstruction parameters exist (pretraining).
  void add_pretrain_params(uint64_t seed);
  bool has_pretrain_params() const { return has_param("pre.mask"); }

  Checkpoint to_checkpoint(Provenance prov = {}) const;
  static Model from_checkpoint(const Checkpoint& ck);
  /// Copy every backbone (non-head, non-pretrain) tensor from `ck`.
  void load_backbone(const Checkpoint& ck);

  /// Forward pass on one window [n_channels, t_in].
  Forward forward(const Tensor& window, const ForwardOptions& opts = {}) const;

  /// Forward for masked reconstruction.
  MaskedForward forward_masked(const Tensor& window, const std::vector<int>& masked_tokens,
                               const ForwardOptions& opts) const;

  std::map<std::string, Tensor> snapshot() const { return params_; }
  void restore(const std::map<std::string, Tensor>& snap);

  static bool is_head_param(const std::string& name);
  static bool is_pretrain_param(const std::string& name);

  /// Stochastic-depth bypass probability of layer `l` (0-based) of `n`.
  static double bypass_prob(int l, int n, double p_max) {
    return p_max * static_cast<double>(l + 1) / static_cast<double>(n);
  }

 private:
  struct Ctx;  // per-forward state (leaf vars, rng, options)

  Var stem(Ctx& c, const Var& window) const;
  Var encode(Ctx& c, const Var& tokens) const;  // CLS + encodings + encoder
  Var encoder_layer(Ctx& c, const Var& x, int layer) const;
  Var head(Ctx& c, const Var& tokens) const;
  Var p(Ctx& c, const std::string& name) const;  // param leaf (cached per forward)
  Var dropout(Ctx& c, const Var& x, double prob) const;

  void register_param(const std::string& name, Tensor t);

  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
  std::vector<std::string> names_;
};

}  // namespace eeglrp
