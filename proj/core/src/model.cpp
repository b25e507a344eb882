#include "contmask/model.hpp"

#include <cmath>
#include <numbers>

namespace contmask {
namespace {

constexpr int kTaps = 9;  // 3×3 window

// P × Cin (pixel-major) → P × 9·Cin, zero padding at the borders.
Matrix im2col(const Matrix& in, int height, int width) {
  const auto cin = in.cols();
  Matrix cols = Matrix::Zero(in.rows(), kTaps * cin);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int p = y * width + x;
      for (int k = 0; k < kTaps; ++k) {
        const int yy = y + k / 3 - 1, xx = x + k % 3 - 1;
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
        cols.row(p).segment(k * cin, cin) = in.row(yy * width + xx);
      }
    }
  }
  return cols;
}

// Adjoint of im2col.
Matrix col2im(const Matrix& cols, int height, int width, Eigen::Index cin) {
  Matrix out = Matrix::Zero(cols.rows(), cin);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int p = y * width + x;
      for (int k = 0; k < kTaps; ++k) {
        const int yy = y + k / 3 - 1, xx = x + k % 3 - 1;
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
        out.row(yy * width + xx) += cols.row(p).segment(k * cin, cin);
      }
    }
  }
  return out;
}

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

void softmax_cols(Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    auto col = m.col(c);
    col.array() = (col.array() - col.maxCoeff()).exp();
    col /= col.sum();
  }
}

// Backward of a row-wise softmax y given dL/dy.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx = dy;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double dot = y.row(r).dot(dy.row(r));
    dx.row(r).array() = y.row(r).array() * (dy.row(r).array() - dot);
  }
  return dx;
}

Matrix add_bias(Matrix m, const Vector& b) {
  m.rowwise() += b.transpose();
  return m;
}

void check_finite(const Matrix& m, const char* layer) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite activations in layer ") + layer);
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

Matrix image_to_pixels(const Image& image) {
  Matrix x(image.height * image.width, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int w = 0; w < image.width; ++w) x(y * image.width + w, c) = image.at(c, y, w);
  return x;
}

}  // namespace

MaskActivation parse_mask_activation(const std::string& s) {
  if (s == "softmax") return MaskActivation::softmax;
  if (s == "sigmoid") return MaskActivation::sigmoid;
  throw ConfigError("mask_activation must be 'softmax' or 'sigmoid', got '" + s + "'");
}

std::string to_string(MaskActivation a) {
  return a == MaskActivation::softmax ? "softmax" : "sigmoid";
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const char*, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

ModelParams zeros_like(const ModelParams& like) {
  ModelParams z = like;
  z.visit([](const char*, auto& t) { t.setZero(); });
  return z;
}

ModelParams init_params(const ModelConfig& c, int num_classes, Rng& rng, double classifier_std) {
  if (c.queries < 1 || c.dim < 1 || c.backbone_hidden < 1 || c.ffn_hidden < 1 || c.channels < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (num_classes < 1) throw ConfigError("model needs at least one class");
  auto scaled = [&](Eigen::Index out, Eigen::Index in) {
    return gaussian(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };
  ModelParams p;
  p.config = c;
  p.queries = gaussian(c.queries, c.dim, 1.0, rng);
  p.conv1_w = scaled(c.backbone_hidden, kTaps * c.channels);
  p.conv1_b = Vector::Zero(c.backbone_hidden);
  p.conv2_w = scaled(c.dim, kTaps * c.backbone_hidden);
  p.conv2_b = Vector::Zero(c.dim);
  p.pixel_w = scaled(c.dim, c.dim);
  p.pixel_b = Vector::Zero(c.dim);
  p.attn_q = scaled(c.dim, c.dim);
  p.attn_k = scaled(c.dim, c.dim);
  p.attn_v = scaled(c.dim, c.dim);
  p.attn_o = scaled(c.dim, c.dim);
  p.ffn_w1 = scaled(c.ffn_hidden, c.dim);
  p.ffn_b1 = Vector::Zero(c.ffn_hidden);
  p.ffn_w2 = scaled(c.dim, c.ffn_hidden);
  p.ffn_b2 = Vector::Zero(c.dim);
  p.mask_w1 = scaled(c.dim, c.dim);
  p.mask_b1 = Vector::Zero(c.dim);
  p.mask_w2 = scaled(c.dim, c.dim);
  p.mask_b2 = Vector::Zero(c.dim);
  p.cls_w = gaussian(num_classes + 1, c.dim, classifier_std, rng);
  p.cls_b = Vector::Zero(num_classes + 1);
  return p;
}

ModelParams expand_classifier(const ModelParams& params, int new_classes, Rng& rng, double std) {
  if (new_classes < 1) throw ConfigError("expand_classifier: new_classes must be >= 1");
  ModelParams out = params;
  const auto old_rows = params.cls_w.rows();
  out.cls_w.conservativeResize(old_rows + new_classes, Eigen::NoChange);
  out.cls_b.conservativeResize(old_rows + new_classes);
  out.cls_w.bottomRows(new_classes) = gaussian(new_classes, params.cls_w.cols(), std, rng);
  out.cls_b.tail(new_classes).setZero();
  return out;
}

Matrix positional_code(int height, int width, int dim) {
  Matrix pe = Matrix::Zero(height * width, dim);
  const int freqs = dim / 4;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int p = y * width + x;
      for (int k = 0; k < freqs; ++k) {
        const double omega = std::numbers::pi / std::pow(2.0, 0.5 * k);
        pe(p, 4 * k + 0) = std::sin(omega * y);
        pe(p, 4 * k + 1) = std::cos(omega * y);
        pe(p, 4 * k + 2) = std::sin(omega * x);
        pe(p, 4 * k + 3) = std::cos(omega * x);
      }
    }
  }
  return pe;
}

PredictionSet forward(const ModelParams& params, const Image& image) {
  ForwardCache cache;
  return forward(params, image, cache);
}

PredictionSet forward(const ModelParams& params, const Image& image, ForwardCache& cache) {
  const auto& c = params.config;
  if (image.channels != c.channels || image.height != c.height || image.width != c.width) {
    throw ConfigError("image dimensions do not match the model config");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.dim));

  // Backbone: two 3×3 layers with tanh.
  cache.input_cols = im2col(image_to_pixels(image), c.height, c.width);
  cache.hidden = add_bias(cache.input_cols * params.conv1_w.transpose(), params.conv1_b).array().tanh();
  cache.hidden_cols = im2col(cache.hidden, c.height, c.width);
  cache.features =
      add_bias(cache.hidden_cols * params.conv2_w.transpose(), params.conv2_b).array().tanh();
  check_finite(cache.features, "backbone");

  // Pixel decoder.
  const Matrix pe = positional_code(c.height, c.width, c.dim);
  cache.pixel_emb = add_bias(cache.features * params.pixel_w.transpose(), params.pixel_b) + pe;
  cache.memory = cache.features + pe;

  // One cross-attention + feed-forward block over the learnable queries.
  cache.q_proj = params.queries * params.attn_q.transpose();
  cache.k_proj = cache.memory * params.attn_k.transpose();
  cache.v_proj = cache.features * params.attn_v.transpose();
  cache.attention = (cache.q_proj * cache.k_proj.transpose()) * inv_sqrt_d;
  softmax_rows(cache.attention);
  cache.attended = cache.attention * cache.v_proj;
  cache.x1 = params.queries + cache.attended * params.attn_o.transpose();
  cache.ffn_act = add_bias(cache.x1 * params.ffn_w1.transpose(), params.ffn_b1).array().tanh();
  cache.segment_emb = add_bias(cache.x1 + cache.ffn_act * params.ffn_w2.transpose(), params.ffn_b2);
  check_finite(cache.segment_emb, "decoder");

  PredictionSet& out = cache.preds;
  out.height = c.height;
  out.width = c.width;
  out.activation = c.mask_activation;
  out.class_logits = add_bias(cache.segment_emb * params.cls_w.transpose(), params.cls_b);
  check_finite(out.class_logits, "classifier");
  out.class_probs = out.class_logits;
  softmax_rows(out.class_probs);

  cache.mask_act = add_bias(cache.segment_emb * params.mask_w1.transpose(), params.mask_b1).array().tanh();
  cache.mask_emb = add_bias(cache.mask_act * params.mask_w2.transpose(), params.mask_b2);
  out.mask_logits = cache.mask_emb * cache.pixel_emb.transpose();
  check_finite(out.mask_logits, "mask head");
  out.masks = out.mask_logits;
  if (c.mask_activation == MaskActivation::softmax) {
    softmax_cols(out.masks);
  } else {
    out.masks = (1.0 + (-out.mask_logits.array()).exp()).inverse();
  }
  return out;
}

PredictionGrad PredictionGrad::zeros(const PredictionSet& preds) {
  return {Matrix::Zero(preds.class_probs.rows(), preds.class_probs.cols()),
          Matrix::Zero(preds.masks.rows(), preds.masks.cols())};
}

Matrix mask_logit_grad(const PredictionSet& preds, const Matrix& dmasks) {
  if (dmasks.rows() != preds.masks.rows() || dmasks.cols() != preds.masks.cols()) {
    throw IntegrityError("mask gradient shape mismatch");
  }
  const auto& m = preds.masks;
  if (preds.activation == MaskActivation::sigmoid) {
    return (dmasks.array() * m.array() * (1.0 - m.array())).matrix();
  }
  // Softmax across queries at each pixel.
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index p = 0; p < m.cols(); ++p) {
    const double dot = m.col(p).dot(dmasks.col(p));
    out.col(p).array() = m.col(p).array() * (dmasks.col(p).array() - dot);
  }
  return out;
}

OutputGrad to_output_grad(const PredictionSet& preds, const PredictionGrad& grad) {
  return {grad.class_probs, mask_logit_grad(preds, grad.masks)};
}

ModelParams backward(const ModelParams& params, const ForwardCache& cache, const OutputGrad& grad) {
  ModelParams grads = zeros_like(params);
  backward_into(params, cache, grad, grads);
  return grads;
}

void backward_into(const ModelParams& params, const ForwardCache& cache, const OutputGrad& grad,
                   ModelParams& g) {
  const auto& c = params.config;
  const auto& preds = cache.preds;
  if (grad.class_probs.rows() != preds.class_probs.rows() ||
      grad.class_probs.cols() != preds.class_probs.cols() ||
      grad.mask_logits.rows() != preds.mask_logits.rows() ||
      grad.mask_logits.cols() != preds.mask_logits.cols() ||
      preds.class_probs.cols() != params.cls_w.rows() || g.cls_w.rows() != params.cls_w.rows()) {
    throw IntegrityError("backward: upstream gradient shapes do not match the forward cache");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.dim));

  // Classifier.
  const Matrix dlogits = softmax_rows_backward(preds.class_probs, grad.class_probs);
  g.cls_w.noalias() += dlogits.transpose() * cache.segment_emb;
  g.cls_b += dlogits.colwise().sum().transpose();
  Matrix dq = dlogits * params.cls_w;

  // Mask head: logits = E_mask · E_pixelᵀ.
  const Matrix& dml = grad.mask_logits;
  const Matrix dmask_emb = dml * cache.pixel_emb;
  const Matrix dpixel_emb = dml.transpose() * cache.mask_emb;
  g.mask_w2.noalias() += dmask_emb.transpose() * cache.mask_act;
  g.mask_b2 += dmask_emb.colwise().sum().transpose();
  const Matrix dmask_pre =
      ((dmask_emb * params.mask_w2).array() * (1.0 - cache.mask_act.array().square())).matrix();
  g.mask_w1.noalias() += dmask_pre.transpose() * cache.segment_emb;
  g.mask_b1 += dmask_pre.colwise().sum().transpose();
  dq.noalias() += dmask_pre * params.mask_w1;

  // Feed-forward block with residual.
  g.ffn_w2.noalias() += dq.transpose() * cache.ffn_act;
  g.ffn_b2 += dq.colwise().sum().transpose();
  const Matrix dffn_pre =
      ((dq * params.ffn_w2).array() * (1.0 - cache.ffn_act.array().square())).matrix();
  g.ffn_w1.noalias() += dffn_pre.transpose() * cache.x1;
  g.ffn_b1 += dffn_pre.colwise().sum().transpose();
  Matrix dx1 = dq;
  dx1.noalias() += dffn_pre * params.ffn_w1;

  // Cross-attention with residual.
  Matrix dqueries = dx1;
  g.attn_o.noalias() += dx1.transpose() * cache.attended;
  const Matrix dattended = dx1 * params.attn_o;
  const Matrix dattention = dattended * cache.v_proj.transpose();
  const Matrix dv = cache.attention.transpose() * dattended;
  const Matrix dscores = softmax_rows_backward(cache.attention, dattention) * inv_sqrt_d;
  const Matrix dq_proj = dscores * cache.k_proj;
  const Matrix dk_proj = dscores.transpose() * cache.q_proj;
  g.attn_q.noalias() += dq_proj.transpose() * params.queries;
  dqueries.noalias() += dq_proj * params.attn_q;
  g.queries += dqueries;
  g.attn_k.noalias() += dk_proj.transpose() * cache.memory;
  g.attn_v.noalias() += dv.transpose() * cache.features;

  Matrix dfeatures = dk_proj * params.attn_k;
  dfeatures.noalias() += dv * params.attn_v;

  // Pixel decoder.
  g.pixel_w.noalias() += dpixel_emb.transpose() * cache.features;
  g.pixel_b += dpixel_emb.colwise().sum().transpose();
  dfeatures.noalias() += dpixel_emb * params.pixel_w;

  // Backbone.
  const Matrix da2 = (dfeatures.array() * (1.0 - cache.features.array().square())).matrix();
  g.conv2_w.noalias() += da2.transpose() * cache.hidden_cols;
  g.conv2_b += da2.colwise().sum().transpose();
  const Matrix dhidden =
      col2im(da2 * params.conv2_w, c.height, c.width, cache.hidden.cols());
  const Matrix da1 = (dhidden.array() * (1.0 - cache.hidden.array().square())).matrix();
  g.conv1_w.noalias() += da1.transpose() * cache.input_cols;
  g.conv1_b += da1.colwise().sum().transpose();
}

std::vector<int> infer_semantic(const PredictionSet& preds) {
  // scores: (K+1) × P
  const Matrix scores = preds.class_probs.transpose() * preds.masks;
  std::vector<int> labels(static_cast<std::size_t>(preds.pixels()), 0);
  for (Eigen::Index p = 0; p < scores.cols(); ++p) {
    int best = 1;
    for (Eigen::Index k = 2; k < scores.rows(); ++k)
      if (scores(k, p) > scores(best, p)) best = static_cast<int>(k);
    labels[static_cast<std::size_t>(p)] = scores.rows() > 1 ? best : 0;
  }
  return labels;
}

std::vector<Segment> infer_panoptic(const PredictionSet& preds, double min_confidence, int min_area) {
  if (min_confidence < 0.0 || min_confidence > 1.0) {
    throw ConfigError("min_confidence must lie in [0, 1]");
  }
  const int n = preds.queries();
  const auto classes = preds.class_probs.cols();
  std::vector<double> confidence(static_cast<std::size_t>(n), 0.0);
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index k = 1; k < classes; ++k) {
      if (preds.class_probs(i, k) > confidence[static_cast<std::size_t>(i)]) {
        confidence[static_cast<std::size_t>(i)] = preds.class_probs(i, k);
        label[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
    }
  }
  std::vector<BinaryMask> owned(static_cast<std::size_t>(n), BinaryMask(preds.height, preds.width));
  for (int p = 0; p < preds.pixels(); ++p) {
    int best = 0;
    double best_score = -1.0;
    for (int i = 0; i < n; ++i) {
      const double s = confidence[static_cast<std::size_t>(i)] * preds.masks(i, p);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    owned[static_cast<std::size_t>(best)].bits[static_cast<std::size_t>(p)] = 1;
  }
  std::vector<Segment> out;
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (label[idx] == 0 || confidence[idx] < min_confidence) continue;
    if (owned[idx].area() < std::max(min_area, 1)) continue;
    out.push_back({label[idx], std::move(owned[idx])});
  }
  return out;
}

}  // namespace contmask
