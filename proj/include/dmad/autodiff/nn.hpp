#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmad/autodiff/ops.hpp"
#include "dmad/autodiff/tensor.hpp"
#include "dmad/core/rng.hpp"

namespace dmad::ad {

// Glorot-uniform initial values for a fan_in x fan_out weight.
std::vector<double> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

  static std::size_t parameter_count(std::size_t in, std::size_t out) { return in * out + out; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);

  Tensor operator()(Tape& tape, const Tensor& x) const;
  static std::size_t parameter_count(std::size_t dim) { return 2 * dim; }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

// Two linear layers with a ReLU between them.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
              std::size_t out, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& x) const;
  const Linear& first() const { return first_; }
  const Linear& second() const { return second_; }
  static std::size_t parameter_count(std::size_t in, std::size_t hidden, std::size_t out) {
    return Linear::parameter_count(in, hidden) + Linear::parameter_count(hidden, out);
  }

 private:
  Linear first_, second_;
};

// Boolean attention mask, true where query `r` may attend to key `c`.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask full(std::size_t rows, std::size_t cols);
  // Queries and keys both partitioned into consecutive blocks of `sizes`;
  // attention allowed only within a block.
  static AttentionMask block_diagonal(const std::vector<std::size_t>& sizes);
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// Scaled dot-product attention over `heads` heads with learned input and
// output projections.
//
// `bias` holds additive pre-softmax logits: empty, one Nq x Nk tensor shared
// by every head, or one per head. Masked logits are treated as -inf; a query
// row with every key masked is rejected.
Tensor multi_head_attention(Tape& tape, const Tensor& queries, const Tensor& keys,
                            const Tensor& values, std::size_t heads, const Linear& wq,
                            const Linear& wk, const Linear& wv, const Linear& wo,
                            const AttentionMask* mask = nullptr,
                            const std::vector<Tensor>& bias = {});

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                     std::size_t heads, Rng& rng);
  // Keys/values of width `kv_dim` projected into `dim`.
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                     std::size_t kv_dim, std::size_t heads, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& queries, const Tensor& keys, const Tensor& values,
                    const AttentionMask* mask = nullptr, const std::vector<Tensor>& bias = {}) const;

  std::size_t heads() const { return heads_; }
  std::size_t dim() const { return dim_; }
  static std::size_t parameter_count(std::size_t dim, std::size_t kv_dim) {
    return Linear::parameter_count(dim, dim) + 2 * Linear::parameter_count(kv_dim, dim) +
           Linear::parameter_count(dim, dim);
  }

 private:
  Linear wq_, wk_, wv_, wo_;
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
};

}  // namespace dmad::ad
