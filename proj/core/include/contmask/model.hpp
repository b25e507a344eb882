#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "contmask/common.hpp"
#include "contmask/synthdata.hpp"

namespace contmask {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class MaskActivation { softmax, sigmoid };

MaskActivation parse_mask_activation(const std::string& s);
std::string to_string(MaskActivation a);

/// Index of the "no object" class in every class distribution.
inline constexpr int kNoObject = 0;

struct ModelConfig {
  int channels = 3;
  int height = 16;
  int width = 16;
  int queries = 10;
  int dim = 32;
  int backbone_hidden = 16;
  int ffn_hidden = 64;
  MaskActivation mask_activation = MaskActivation::softmax;

  int pixels() const { return height * width; }
  bool operator==(const ModelConfig&) const = default;
};

/// All learnable tensors. Row 0 of the classifier is the no-object class;
/// rows 1..K are the seen classes in the order they were introduced.
///
/// Layouts (pixel-major, P = H·W):
///   conv weights are (out × 9·in) over a 3×3 zero-padded window,
///   linear weights are (out × in) and act on row vectors as x·Wᵀ.
struct ModelParams {
  ModelConfig config;

  Matrix queries;   // N × d
  Matrix conv1_w;   // hidden × 9C
  Vector conv1_b;
  Matrix conv2_w;   // d × 9·hidden
  Vector conv2_b;
  Matrix pixel_w;   // d × d
  Vector pixel_b;
  Matrix attn_q;    // d × d
  Matrix attn_k;
  Matrix attn_v;
  Matrix attn_o;
  Matrix ffn_w1;    // ffn × d
  Vector ffn_b1;
  Matrix ffn_w2;    // d × ffn
  Vector ffn_b2;
  Matrix mask_w1;   // d × d
  Vector mask_b1;
  Matrix mask_w2;
  Vector mask_b2;
  Matrix cls_w;     // (K+1) × d
  Vector cls_b;

  int num_classes() const { return static_cast<int>(cls_w.rows()) - 1; }
  std::size_t parameter_count() const;

  /// Calls f(name, tensor) for every tensor in a fixed order. Vectors are
  /// passed as Eigen::Ref to a column so the same callback handles both.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, F& f) {
    f("queries", p.queries);
    f("conv1.weight", p.conv1_w);
    f("conv1.bias", p.conv1_b);
    f("conv2.weight", p.conv2_w);
    f("conv2.bias", p.conv2_b);
    f("pixel.weight", p.pixel_w);
    f("pixel.bias", p.pixel_b);
    f("attn.q", p.attn_q);
    f("attn.k", p.attn_k);
    f("attn.v", p.attn_v);
    f("attn.o", p.attn_o);
    f("ffn.w1", p.ffn_w1);
    f("ffn.b1", p.ffn_b1);
    f("ffn.w2", p.ffn_w2);
    f("ffn.b2", p.ffn_b2);
    f("mask.w1", p.mask_w1);
    f("mask.b1", p.mask_b1);
    f("mask.w2", p.mask_w2);
    f("mask.b2", p.mask_b2);
    f("cls.weight", p.cls_w);
    f("cls.bias", p.cls_b);
  }
};

/// Same shapes as `like`, every entry zero. Used as the gradient record.
ModelParams zeros_like(const ModelParams& like);

/// Scaled-Gaussian initialization from the init stream. The classifier starts
/// with `num_classes` + 1 rows drawn with std `classifier_std`.
ModelParams init_params(const ModelConfig& config, int num_classes, Rng& rng,
                        double classifier_std = 0.01);

/// Appends `new_classes` classifier rows drawn from N(0, std²). Existing rows
/// and all other tensors are left bit-identical. Throws ConfigError if
/// new_classes < 1.
ModelParams expand_classifier(const ModelParams& params, int new_classes, Rng& rng,
                              double std = 0.01);

/// Model output z = {(p_i, m_i)}.
struct PredictionSet {
  int height = 0;
  int width = 0;
  Matrix class_probs;  // N × (K+1), rows on the simplex
  Matrix class_logits; // N × (K+1), pre-softmax
  Matrix mask_logits;  // N × P
  Matrix masks;        // N × P, in [0, 1]
  MaskActivation activation = MaskActivation::softmax;

  int queries() const { return static_cast<int>(class_probs.rows()); }
  int pixels() const { return height * width; }
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  Matrix input_cols;  // P × 9C
  Matrix hidden;      // P × hidden, tanh output of conv1
  Matrix hidden_cols; // P × 9·hidden
  Matrix features;    // P × d, E_feat
  Matrix pixel_emb;   // P × d, E_pixel
  Matrix memory;      // P × d, features + positional code
  Matrix q_proj;      // N × d
  Matrix k_proj;      // P × d
  Matrix v_proj;      // P × d
  Matrix attention;   // N × P
  Matrix attended;    // N × d
  Matrix x1;          // N × d
  Matrix ffn_act;     // N × ffn
  Matrix segment_emb; // N × d, Q
  Matrix mask_act;    // N × d
  Matrix mask_emb;    // N × d, E_mask
  PredictionSet preds;
};

/// Fixed 2-D sinusoidal grid code, P × d.
Matrix positional_code(int height, int width, int dim);

/// Throws ConfigError if the image dimensions differ from the config and
/// NumericError (naming the layer) on non-finite activations.
PredictionSet forward(const ModelParams& params, const Image& image);
PredictionSet forward(const ModelParams& params, const Image& image, ForwardCache& cache);

/// Upstream gradient of a scalar loss with respect to the model outputs.
struct OutputGrad {
  Matrix class_probs;  // N × (K+1)
  Matrix mask_logits;  // N × P
};

/// Same, but with respect to the activated masks instead of their logits.
struct PredictionGrad {
  Matrix class_probs;
  Matrix masks;

  static PredictionGrad zeros(const PredictionSet& preds);
};

/// Chains a gradient on the activated masks through the mask activation.
Matrix mask_logit_grad(const PredictionSet& preds, const Matrix& dmasks);
OutputGrad to_output_grad(const PredictionSet& preds, const PredictionGrad& grad);

/// Exact reverse-mode gradient of every tensor. Throws IntegrityError when
/// the upstream shapes disagree with the cache.
ModelParams backward(const ModelParams& params, const ForwardCache& cache, const OutputGrad& grad);
/// Accumulating variant: adds into `grads` instead of allocating.
void backward_into(const ModelParams& params, const ForwardCache& cache, const OutputGrad& grad,
                   ModelParams& grads);

/// Per-pixel argmax over k ≠ no-object of Σ_i p_i(k)·m_i. Returns classifier
/// indices in 1..K.
std::vector<int> infer_semantic(const PredictionSet& preds);

/// Panoptic segments labelled with classifier indices (1..K).
std::vector<Segment> infer_panoptic(const PredictionSet& preds, double min_confidence, int min_area);

}  // namespace contmask
