#include "parscale/model/transformer.hpp"

#include <cmath>
#include <limits>

#include "aggregation_internal.hpp"
#include "eigen_types.hpp"
#include "parscale/common/errors.hpp"
#include "parscale/common/parallel.hpp"

namespace parscale {

TokenBatch::TokenBatch(std::size_t b, std::size_t t,
                       std::vector<std::int32_t> values)
    : batch(b), seq(t), ids(std::move(values)) {
  if (ids.size() != b * t) {
    throw ContractError("TokenBatch: expected " + std::to_string(b * t) +
                        " ids, got " + std::to_string(ids.size()));
  }
}

namespace {

using detail::ConstMatMap;
using detail::ConstRowMap;
using detail::Mat;
using detail::MatMap;
using detail::RowVec;

template <typename T>
struct LayerWeights {
  const Tensor<T>* attn_norm;
  const Tensor<T>* q_w;
  const Tensor<T>* q_b;
  const Tensor<T>* k_w;
  const Tensor<T>* k_b;
  const Tensor<T>* v_w;
  const Tensor<T>* v_b;
  const Tensor<T>* o_w;
  const Tensor<T>* mlp_norm;
  const Tensor<T>* gate_w;
  const Tensor<T>* up_w;
  const Tensor<T>* down_w;
};

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data.data(), rows, cols);
}

template <typename T>
ConstRowMap<T> as_row(const Tensor<T>& t) {
  return ConstRowMap<T>(t.data.data(), t.size());
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data.data(), rows, cols);
}

// Per-layer activations of one stream over all batch rows.
template <typename T>
struct LayerCache {
  Mat<T> x_in;
  Mat<T> h1;
  std::vector<T> inv_rms1;
  Mat<T> q;  // post-rotary
  Mat<T> k;  // post-rotary
  Mat<T> v;
  Mat<T> prefix_k;  // [Lp, kv], post-rotary
  Mat<T> attn;      // [B * heads * T, Lp + T]
  Mat<T> ctx;
  Mat<T> x_mid;
  Mat<T> h2;
  std::vector<T> inv_rms2;
  Mat<T> gate;
  Mat<T> up;
  Mat<T> act;
};

template <typename T>
struct StreamCache {
  std::vector<LayerCache<T>> layers;
  Mat<T> x_out;
  std::vector<T> inv_rms_final;
  Mat<T> hidden;  // [R, d]
  Mat<T> probs;   // [R, V]
};

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
class Engine {
 public:
  Engine(const ParameterStore<T>& store, const ModelConfig& config,
         const TokenBatch& tokens)
      : store_(store), cfg_(config), tokens_(tokens) {
    check_store_matches(store, config);
    if (tokens.batch == 0 || tokens.seq == 0) {
      throw InputError("empty token batch");
    }
    if (tokens.seq + cfg_.effective_prefix_len() > cfg_.max_seq_len) {
      throw InputError("sequence too long: " + std::to_string(tokens.seq) +
                       " tokens + " +
                       std::to_string(cfg_.effective_prefix_len()) +
                       " prefix > max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
    }
    for (auto id : tokens.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw InputError("token id " + std::to_string(id) +
                         " out of range for vocab " +
                         std::to_string(cfg_.vocab_size));
      }
    }
    d_ = cfg_.hidden_size;
    kv_ = cfg_.kv_dim();
    hd_ = cfg_.head_dim();
    lp_ = cfg_.effective_prefix_len();
    b_ = tokens.batch;
    t_ = tokens.seq;
    rows_ = b_ * t_;
    embed_ = &store.at(names::kEmbedding);
    final_norm_ = &store.at(names::kFinalNorm);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      auto get = [&](const char* leaf) {
        return &store.at(names::layer(l, leaf));
      };
      layers_.push_back({get("attn_norm.weight"), get("attn.q_proj.weight"),
                         get("attn.q_proj.bias"), get("attn.k_proj.weight"),
                         get("attn.k_proj.bias"), get("attn.v_proj.weight"),
                         get("attn.v_proj.bias"), get("attn.o_proj.weight"),
                         get("mlp_norm.weight"), get("mlp.gate_proj.weight"),
                         get("mlp.up_proj.weight"), get("mlp.down_proj.weight")});
    }
    if (cfg_.has_parallel_streams()) {
      prefix_bank_ = &store.at(names::kPrefixBank);
    }
    build_rotary_tables(lp_ + t_);
  }

  std::size_t rows() const { return rows_; }

  void forward_stream(std::size_t s, StreamCache<T>& cache) const {
    const std::size_t layers = cfg_.num_layers;
    cache.layers.resize(layers);
    Mat<T> x(rows_, d_);
    for (std::size_t r = 0; r < rows_; ++r) {
      x.row(r) = ConstRowMap<T>(
          embed_->data.data() + static_cast<std::size_t>(tokens_.ids[r]) * d_,
          d_);
    }
    for (std::size_t l = 0; l < layers; ++l) {
      LayerCache<T>& c = cache.layers[l];
      const LayerWeights<T>& w = layers_[l];
      c.x_in = x;
      rms_norm(c.x_in, *w.attn_norm, c.h1, c.inv_rms1);
      c.q.noalias() = c.h1 * as_mat(*w.q_w, d_, d_);
      c.q.rowwise() += as_row(*w.q_b);
      c.k.noalias() = c.h1 * as_mat(*w.k_w, d_, kv_);
      c.k.rowwise() += as_row(*w.k_b);
      c.v.noalias() = c.h1 * as_mat(*w.v_w, d_, kv_);
      c.v.rowwise() += as_row(*w.v_b);
      rotate_sequence(c.q, cfg_.num_heads, +1);
      rotate_sequence(c.k, cfg_.num_kv_groups, +1);
      if (lp_ > 0) {
        c.prefix_k = prefix_slice(s, l, 0);
        rotate_prefix(c.prefix_k, +1);
      }
      attention_forward(s, l, c);
      c.x_mid = c.x_in;
      c.x_mid.noalias() += c.ctx * as_mat(*w.o_w, d_, d_);
      rms_norm(c.x_mid, *w.mlp_norm, c.h2, c.inv_rms2);
      const std::size_t inter = cfg_.intermediate_size;
      c.gate.noalias() = c.h2 * as_mat(*w.gate_w, d_, inter);
      c.up.noalias() = c.h2 * as_mat(*w.up_w, d_, inter);
      c.act = c.gate.unaryExpr([](T g) { return silu(g); })
                  .cwiseProduct(c.up);
      x = c.x_mid;
      x.noalias() += c.act * as_mat(*w.down_w, inter, d_);
    }
    cache.x_out = std::move(x);
    rms_norm(cache.x_out, *final_norm_, cache.hidden, cache.inv_rms_final);
    cache.probs.noalias() =
        cache.hidden * as_mat(*embed_, cfg_.vocab_size, d_).transpose();
    softmax_rows(cache.probs);
  }

  // d_hidden: [R, d] gradient w.r.t. the stream's final hidden state.
  // target_coeff[r]: d loss / d probs[r, target_r] for this stream.
  // Gradients are accumulated into `grads` (which holds only trainable
  // tensors).
  void backward_stream(std::size_t s, const StreamCache<T>& cache,
                       const TokenBatch& targets,
                       std::span<const T> target_coeff, Mat<T> d_hidden,
                       GradientStore<T>& grads, bool freeze_backbone) const {
    const std::size_t vocab = cfg_.vocab_size;
    const bool train_backbone = !freeze_backbone;

    // Softmax over the tied LM head: only the target entry of each row
    // carries upstream gradient.
    Mat<T> d_logits(rows_, vocab);
    for (std::size_t r = 0; r < rows_; ++r) {
      const auto y = static_cast<std::size_t>(targets.ids[r]);
      const T py = cache.probs(r, y);
      const T c = target_coeff[r] * py;
      d_logits.row(r) = -c * cache.probs.row(r);
      d_logits(r, y) += c;
    }
    d_hidden.noalias() += d_logits * as_mat(*embed_, vocab, d_);
    if (train_backbone) {
      as_mat(grads.at(names::kEmbedding), vocab, d_).noalias() +=
          d_logits.transpose() * cache.hidden;
    }

    Mat<T> dx;
    rms_norm_backward(cache.x_out, *final_norm_, cache.inv_rms_final, d_hidden,
                      dx, train_backbone ? &grads.at(names::kFinalNorm) : nullptr);

    for (std::size_t li = cfg_.num_layers; li-- > 0;) {
      const LayerCache<T>& c = cache.layers[li];
      const LayerWeights<T>& w = layers_[li];
      const std::size_t inter = cfg_.intermediate_size;
      auto grad_of = [&](const char* leaf) -> Tensor<T>* {
        return train_backbone ? &grads.at(names::layer(li, leaf)) : nullptr;
      };

      // MLP block.
      Mat<T> d_act = dx * as_mat(*w.down_w, inter, d_).transpose();
      if (auto* g = grad_of("mlp.down_proj.weight")) {
        as_mat(*g, inter, d_).noalias() += c.act.transpose() * dx;
      }
      Mat<T> d_gate(rows_, inter);
      Mat<T> d_up(rows_, inter);
      for (Eigen::Index i = 0; i < c.gate.size(); ++i) {
        const T gv = c.gate.data()[i];
        const T sig = T(1) / (T(1) + std::exp(-gv));
        const T da = d_act.data()[i];
        d_up.data()[i] = da * gv * sig;
        d_gate.data()[i] =
            da * c.up.data()[i] * sig * (T(1) + gv * (T(1) - sig));
      }
      if (auto* g = grad_of("mlp.gate_proj.weight")) {
        as_mat(*g, d_, inter).noalias() += c.h2.transpose() * d_gate;
      }
      if (auto* g = grad_of("mlp.up_proj.weight")) {
        as_mat(*g, d_, inter).noalias() += c.h2.transpose() * d_up;
      }
      Mat<T> d_h2 = d_gate * as_mat(*w.gate_w, d_, inter).transpose();
      d_h2.noalias() += d_up * as_mat(*w.up_w, d_, inter).transpose();
      Mat<T> dx_mid;
      rms_norm_backward(c.x_mid, *w.mlp_norm, c.inv_rms2, d_h2, dx_mid,
                        grad_of("mlp_norm.weight"));
      dx_mid += dx;

      // Attention block.
      Mat<T> d_ctx = dx_mid * as_mat(*w.o_w, d_, d_).transpose();
      if (auto* g = grad_of("attn.o_proj.weight")) {
        as_mat(*g, d_, d_).noalias() += c.ctx.transpose() * dx_mid;
      }
      Mat<T> dq = Mat<T>::Zero(rows_, d_);
      Mat<T> dk = Mat<T>::Zero(rows_, kv_);
      Mat<T> dv = Mat<T>::Zero(rows_, kv_);
      Mat<T> dpk = Mat<T>::Zero(lp_, kv_);
      Mat<T> dpv = Mat<T>::Zero(lp_, kv_);
      attention_backward(s, li, c, d_ctx, dq, dk, dv, dpk, dpv);
      rotate_sequence(dq, cfg_.num_heads, -1);
      rotate_sequence(dk, cfg_.num_kv_groups, -1);
      if (lp_ > 0) {
        rotate_prefix(dpk, -1);
        if (grads.contains(names::kPrefixBank)) {
          prefix_grad_slice(grads.at(names::kPrefixBank), s, li, 0) += dpk;
          prefix_grad_slice(grads.at(names::kPrefixBank), s, li, 1) += dpv;
        }
      }
      if (train_backbone) {
        accumulate_linear(grads, li, "attn.q_proj", c.h1, dq, d_);
        accumulate_linear(grads, li, "attn.k_proj", c.h1, dk, kv_);
        accumulate_linear(grads, li, "attn.v_proj", c.h1, dv, kv_);
      }
      Mat<T> d_h1 = dq * as_mat(*w.q_w, d_, d_).transpose();
      d_h1.noalias() += dk * as_mat(*w.k_w, d_, kv_).transpose();
      d_h1.noalias() += dv * as_mat(*w.v_w, d_, kv_).transpose();
      Mat<T> dx_in;
      rms_norm_backward(c.x_in, *w.attn_norm, c.inv_rms1, d_h1, dx_in,
                        grad_of("attn_norm.weight"));
      dx = dx_in + dx_mid;
    }

    if (train_backbone) {
      auto& ge = grads.at(names::kEmbedding);
      for (std::size_t r = 0; r < rows_; ++r) {
        const auto id = static_cast<std::size_t>(tokens_.ids[r]);
        MatMap<T>(ge.data.data() + id * d_, 1, d_) += dx.row(r);
      }
    }
  }

 private:
  void build_rotary_tables(std::size_t positions) {
    const std::size_t half = hd_ / 2;
    cos_.resize(positions, half);
    sin_.resize(positions, half);
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t i = 0; i < half; ++i) {
        const double inv_freq =
            std::pow(cfg_.rope_base, -2.0 * static_cast<double>(i) /
                                         static_cast<double>(hd_));
        const double angle = static_cast<double>(p) * inv_freq;
        cos_(p, i) = static_cast<T>(std::cos(angle));
        sin_(p, i) = static_cast<T>(std::sin(angle));
      }
    }
  }

  // Rotates each head slice of row r by its position. direction -1 applies
  // the transpose (inverse) rotation, used for gradients.
  void rotate_row(T* row, std::size_t heads, std::size_t pos,
                  int direction) const {
    const std::size_t half = hd_ / 2;
    for (std::size_t h = 0; h < heads; ++h) {
      T* v = row + h * hd_;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cos_(pos, i);
        const T sn = direction > 0 ? sin_(pos, i) : -sin_(pos, i);
        const T a = v[i];
        const T b = v[i + half];
        v[i] = a * c - b * sn;
        v[i + half] = b * c + a * sn;
      }
    }
  }

  void rotate_sequence(Mat<T>& m, std::size_t heads, int direction) const {
    for (std::size_t r = 0; r < rows_; ++r) {
      rotate_row(m.data() + r * m.cols(), heads, lp_ + r % t_, direction);
    }
  }

  void rotate_prefix(Mat<T>& m, int direction) const {
    for (std::size_t k = 0; k < lp_; ++k) {
      rotate_row(m.data() + k * m.cols(), cfg_.num_kv_groups, k, direction);
    }
  }

  std::size_t prefix_offset(std::size_t s, std::size_t l,
                            std::size_t kind) const {
    return (((s * cfg_.num_layers + l) * 2 + kind) * lp_) * kv_;
  }

  Mat<T> prefix_slice(std::size_t s, std::size_t l, std::size_t kind) const {
    return ConstMatMap<T>(prefix_bank_->data.data() + prefix_offset(s, l, kind),
                          lp_, kv_);
  }

  MatMap<T> prefix_grad_slice(Tensor<T>& g, std::size_t s, std::size_t l,
                              std::size_t kind) const {
    return MatMap<T>(g.data.data() + prefix_offset(s, l, kind), lp_, kv_);
  }

  void gather_keys_values(std::size_t s, std::size_t l, const LayerCache<T>& c,
                          std::size_t b, std::size_t group, Mat<T>& keys,
                          Mat<T>& values) const {
    const std::size_t n = lp_ + t_;
    keys.resize(n, hd_);
    values.resize(n, hd_);
    if (lp_ > 0) {
      keys.topRows(lp_) = c.prefix_k.middleCols(group * hd_, hd_);
      values.topRows(lp_) = ConstMatMap<T>(
          prefix_bank_->data.data() + prefix_offset(s, l, 1), lp_, kv_)
                                .middleCols(group * hd_, hd_);
    }
    keys.bottomRows(t_) = c.k.block(b * t_, group * hd_, t_, hd_);
    values.bottomRows(t_) = c.v.block(b * t_, group * hd_, t_, hd_);
  }

  void attention_forward(std::size_t s, std::size_t l, LayerCache<T>& c) const {
    const std::size_t heads = cfg_.num_heads;
    const std::size_t per_group = heads / cfg_.num_kv_groups;
    const std::size_t n = lp_ + t_;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd_));
    c.attn.resize(b_ * heads * t_, n);
    c.ctx.resize(rows_, d_);
    Mat<T> keys, values;
    for (std::size_t b = 0; b < b_; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t group = h / per_group;
        gather_keys_values(s, l, c, b, group, keys, values);
        auto scores = c.attn.middleRows((b * heads + h) * t_, t_);
        scores.noalias() =
            (c.q.block(b * t_, h * hd_, t_, hd_) * keys.transpose()) * scale;
        for (std::size_t t = 0; t < t_; ++t) {
          auto row = scores.row(t);
          const std::size_t visible = lp_ + t + 1;
          const T m = row.head(visible).maxCoeff();
          row.head(visible) = (row.head(visible).array() - m).exp();
          row.head(visible) /= row.head(visible).sum();
          row.tail(n - visible).setZero();
        }
        c.ctx.block(b * t_, h * hd_, t_, hd_).noalias() = scores * values;
      }
    }
  }

  void attention_backward(std::size_t s, std::size_t l, const LayerCache<T>& c,
                          const Mat<T>& d_ctx, Mat<T>& dq, Mat<T>& dk,
                          Mat<T>& dv, Mat<T>& dpk, Mat<T>& dpv) const {
    const std::size_t heads = cfg_.num_heads;
    const std::size_t per_group = heads / cfg_.num_kv_groups;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd_));
    Mat<T> keys, values, d_attn, d_scores, d_keys, d_values;
    for (std::size_t b = 0; b < b_; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t group = h / per_group;
        gather_keys_values(s, l, c, b, group, keys, values);
        const auto attn = c.attn.middleRows((b * heads + h) * t_, t_);
        const auto d_out = d_ctx.block(b * t_, h * hd_, t_, hd_);
        d_attn.noalias() = d_out * values.transpose();
        d_values.noalias() = attn.transpose() * d_out;
        // Softmax backward; masked entries have attn == 0.
        d_scores = attn.cwiseProduct(d_attn);
        for (std::size_t t = 0; t < t_; ++t) {
          const T dot = d_scores.row(t).sum();
          d_scores.row(t) -= attn.row(t) * dot;
        }
        d_scores *= scale;
        dq.block(b * t_, h * hd_, t_, hd_).noalias() += d_scores * keys;
        d_keys.noalias() =
            d_scores.transpose() * c.q.block(b * t_, h * hd_, t_, hd_);
        dk.block(b * t_, group * hd_, t_, hd_) += d_keys.bottomRows(t_);
        dv.block(b * t_, group * hd_, t_, hd_) += d_values.bottomRows(t_);
        if (lp_ > 0) {
          dpk.middleCols(group * hd_, hd_) += d_keys.topRows(lp_);
          dpv.middleCols(group * hd_, hd_) += d_values.topRows(lp_);
        }
      }
    }
  }

  void rms_norm(const Mat<T>& x, const Tensor<T>& scale, Mat<T>& out,
                std::vector<T>& inv_rms) const {
    const auto g = as_row(scale);
    out.resize(x.rows(), x.cols());
    inv_rms.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T ms = x.row(r).squaredNorm() / static_cast<T>(x.cols());
      const T inv = T(1) / std::sqrt(ms + static_cast<T>(cfg_.norm_eps));
      inv_rms[r] = inv;
      out.row(r) = (x.row(r) * inv).cwiseProduct(g);
    }
  }

  void rms_norm_backward(const Mat<T>& x, const Tensor<T>& scale,
                         const std::vector<T>& inv_rms, const Mat<T>& d_out,
                         Mat<T>& dx, Tensor<T>* d_scale) const {
    const auto g = as_row(scale);
    dx.resize(x.rows(), x.cols());
    RowVec<T> dg = RowVec<T>::Zero(x.cols());
    const T inv_n = T(1) / static_cast<T>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T inv = inv_rms[r];
      const RowVec<T> xhat = x.row(r) * inv;
      const RowVec<T> dxhat = d_out.row(r).cwiseProduct(g);
      if (d_scale) dg += d_out.row(r).cwiseProduct(xhat);
      const T dot = dxhat.dot(xhat) * inv_n;
      dx.row(r) = (dxhat - xhat * dot) * inv;
    }
    if (d_scale) MatMap<T>(d_scale->data.data(), 1, x.cols()) += dg;
  }

  void accumulate_linear(GradientStore<T>& grads, std::size_t l,
                         const char* base, const Mat<T>& input,
                         const Mat<T>& d_out, std::size_t out_dim) const {
    const std::string prefix = names::layer(l, base);
    as_mat(grads.at(prefix + ".weight"), d_, out_dim).noalias() +=
        input.transpose() * d_out;
    detail::add_column_sums(d_out, grads.at(prefix + ".bias").data.data());
  }

  static void softmax_rows(Mat<T>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      auto row = m.row(r);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
  }

  const ParameterStore<T>& store_;
  const ModelConfig& cfg_;
  const TokenBatch& tokens_;
  std::size_t d_ = 0, kv_ = 0, hd_ = 0, lp_ = 0, b_ = 0, t_ = 0, rows_ = 0;
  const Tensor<T>* embed_ = nullptr;
  const Tensor<T>* final_norm_ = nullptr;
  const Tensor<T>* prefix_bank_ = nullptr;
  std::vector<LayerWeights<T>> layers_;
  Mat<T> cos_, sin_;
};

// Shared forward: per-stream caches plus aggregation.
template <typename T>
struct FullForward {
  std::vector<StreamCache<T>> streams;
  detail::AggregationActivations<T> agg;
  Mat<T> smoothed;  // [R, P]
  Mat<T> probs;     // [R, V]
};

template <typename T>
FullForward<T> run_forward(const Engine<T>& engine, const ParameterStore<T>& store,
                           const ModelConfig& config) {
  const std::size_t p = config.num_streams;
  const std::size_t rows = engine.rows();
  const std::size_t d = config.hidden_size;
  FullForward<T> out;
  out.streams.resize(p);
  parallel_for(p, [&](std::size_t s) { engine.forward_stream(s, out.streams[s]); });

  if (p == 1) {
    out.smoothed = Mat<T>::Ones(rows, 1);
    out.probs = out.streams[0].probs;
    return out;
  }
  std::vector<T> hidden(p * rows * d);
  for (std::size_t s = 0; s < p; ++s) {
    MatMap<T>(hidden.data() + s * rows * d, rows, d) = out.streams[s].hidden;
  }
  out.agg = detail::aggregation_forward<T>(
      hidden, rows, AggregationHeadView<T>::from_store(store, config));
  out.smoothed = out.agg.weights;
  for (Eigen::Index r = 0; r < out.smoothed.rows(); ++r) {
    smooth_weights(std::span<T>(out.smoothed.data() + r * p, p),
                   config.smoothing_epsilon);
  }
  out.probs = Mat<T>::Zero(rows, config.vocab_size);
  for (std::size_t s = 0; s < p; ++s) {
    out.probs += out.smoothed.col(s).asDiagonal() * out.streams[s].probs;
  }
  return out;
}

}  // namespace

template <typename T>
StreamBatchOutput<T> forward_parallel(const ParameterStore<T>& store,
                                      const ModelConfig& config,
                                      const TokenBatch& tokens) {
  config.validate();
  Engine<T> engine(store, config, tokens);
  FullForward<T> fwd = run_forward(engine, store, config);

  const std::size_t p = config.num_streams;
  const std::size_t rows = engine.rows();
  StreamBatchOutput<T> out;
  out.num_streams = p;
  out.batch = tokens.batch;
  out.seq = tokens.seq;
  out.hidden_size = config.hidden_size;
  out.vocab_size = config.vocab_size;
  out.stream_hidden.resize(p * rows * config.hidden_size);
  out.stream_probs.resize(p * rows * config.vocab_size);
  for (std::size_t s = 0; s < p; ++s) {
    const auto& c = fwd.streams[s];
    std::copy(c.hidden.data(), c.hidden.data() + c.hidden.size(),
              out.stream_hidden.begin() + s * rows * config.hidden_size);
    std::copy(c.probs.data(), c.probs.data() + c.probs.size(),
              out.stream_probs.begin() + s * rows * config.vocab_size);
  }
  out.weights.assign(fwd.smoothed.data(),
                     fwd.smoothed.data() + fwd.smoothed.size());
  out.probs.assign(fwd.probs.data(), fwd.probs.data() + fwd.probs.size());
  return out;
}

template <typename T>
LossResult evaluate_loss(const ParameterStore<T>& store,
                         const ModelConfig& config, const TokenBatch& tokens,
                         const TokenBatch& targets) {
  if (targets.batch != tokens.batch || targets.seq != tokens.seq) {
    throw ContractError("targets shape differs from tokens shape");
  }
  const auto out = forward_parallel(store, config, tokens);
  return cross_entropy_loss<T>(out.probs, targets.ids, config.vocab_size);
}

template <typename T>
BackwardResult<T> backward(const ParameterStore<T>& store,
                           const ModelConfig& config, const TokenBatch& tokens,
                           const TokenBatch& targets,
                           const BackwardOptions& options) {
  config.validate();
  if (targets.batch != tokens.batch || targets.seq != tokens.seq) {
    throw ContractError("targets shape differs from tokens shape");
  }
  Engine<T> engine(store, config, tokens);
  FullForward<T> fwd = run_forward(engine, store, config);

  const std::size_t p = config.num_streams;
  const std::size_t rows = engine.rows();
  const std::size_t d = config.hidden_size;
  const std::size_t vocab = config.vocab_size;

  BackwardResult<T> result;
  const std::span<const T> probs(fwd.probs.data(), fwd.probs.size());
  result.loss = cross_entropy_loss<T>(probs, targets.ids, vocab);

  // d loss / d p_hat(target) per row; zero where the floor was hit.
  std::vector<T> d_mix(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double py = static_cast<double>(probs[r * vocab + targets.ids[r]]);
    d_mix[r] = py >= kProbabilityFloor
                   ? static_cast<T>(-1.0 / (static_cast<double>(rows) * py))
                   : T(0);
  }

  GradientStore<T> grads;
  for (const auto& [name, t] : store) {
    if (options.freeze_backbone && is_backbone_tensor(name)) continue;
    grads.add(name, Tensor<T>(t.shape));
  }

  std::vector<Mat<T>> d_hidden(p, Mat<T>::Zero(rows, d));
  if (p > 1) {
    const double eps = config.smoothing_epsilon;
    // d loss / d raw softmax weight.
    Mat<T> d_weights(rows, p);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto y = static_cast<std::size_t>(targets.ids[r]);
      for (std::size_t s = 0; s < p; ++s) {
        d_weights(r, s) = d_mix[r] * fwd.streams[s].probs(r, y) *
                          static_cast<T>(1.0 - eps);
      }
    }
    const Mat<T>& w = fwd.agg.weights;
    Mat<T> d_logits(rows, p);
    for (std::size_t r = 0; r < rows; ++r) {
      const T dot = w.row(r).dot(d_weights.row(r));
      d_logits.row(r) = w.row(r).cwiseProduct(
          (d_weights.row(r).array() - dot).matrix());
    }
    const auto head = AggregationHeadView<T>::from_store(store, config);
    const ConstMatMap<T> w1(head.fc1_weight.data(), p * d, d);
    const ConstMatMap<T> w2(head.fc2_weight.data(), d, p);
    MatMap<T>(grads.at(names::kAggFc2Weight).data.data(), d, p).noalias() +=
        fwd.agg.hidden.transpose() * d_logits;
    detail::add_column_sums(d_logits, grads.at(names::kAggFc2Bias).data.data());
    Mat<T> d_pre = d_logits * w2.transpose();
    d_pre.array() *= (T(1) - fwd.agg.hidden.array().square());
    MatMap<T>(grads.at(names::kAggFc1Weight).data.data(), p * d, d).noalias() +=
        fwd.agg.concat.transpose() * d_pre;
    detail::add_column_sums(d_pre, grads.at(names::kAggFc1Bias).data.data());
    const Mat<T> d_concat = d_pre * w1.transpose();
    for (std::size_t s = 0; s < p; ++s) {
      d_hidden[s] = d_concat.middleCols(s * d, d);
    }
  }

  // Per-stream partial gradients, reduced in stream order so the result
  // does not depend on the thread count.
  std::vector<GradientStore<T>> partial(p);
  parallel_for(p, [&](std::size_t s) {
    partial[s] = grads.zeros_like();
    std::vector<T> coeff(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      coeff[r] = d_mix[r] * fwd.smoothed(r, s);
    }
    engine.backward_stream(s, fwd.streams[s], targets, coeff,
                           std::move(d_hidden[s]), partial[s],
                           options.freeze_backbone);
  });
  for (std::size_t s = 0; s < p; ++s) {
    for (auto& [name, g] : grads) {
      const auto& src = partial[s].at(name).data;
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += src[i];
    }
  }
  result.grads = std::move(grads);
  return result;
}

template StreamBatchOutput<float> forward_parallel(const ParameterStore<float>&,
                                                   const ModelConfig&,
                                                   const TokenBatch&);
template StreamBatchOutput<double> forward_parallel(
    const ParameterStore<double>&, const ModelConfig&, const TokenBatch&);
template LossResult evaluate_loss(const ParameterStore<float>&,
                                  const ModelConfig&, const TokenBatch&,
                                  const TokenBatch&);
template LossResult evaluate_loss(const ParameterStore<double>&,
                                  const ModelConfig&, const TokenBatch&,
                                  const TokenBatch&);
template BackwardResult<float> backward(const ParameterStore<float>&,
                                        const ModelConfig&, const TokenBatch&,
                                        const TokenBatch&,
                                        const BackwardOptions&);
template BackwardResult<double> backward(const ParameterStore<double>&,
                                         const ModelConfig&, const TokenBatch&,
                                         const TokenBatch&,
                                         const BackwardOptions&);

}  // namespace parscale
