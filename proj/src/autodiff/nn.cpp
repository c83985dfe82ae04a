#include "dmad/autodiff/nn.hpp"

#include <cmath>
#include <limits>

namespace dmad::ad {

std::vector<double> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& x : w) x = rng.uniform(-limit, limit);
  return w;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng)
    : in_(in), out_(out) {
  weight_ = &store.add(name + ".weight", Shape{in, out}, glorot(in, out, rng));
  bias_ = &store.add(name + ".bias", Shape{1, out}, std::vector<double>(out, 0.0));
}

Tensor Linear::operator()(Tape& tape, const Tensor& x) const {
  return add(matmul(x, tape.param(*weight_)), tape.param(*bias_));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim) {
  gamma_ = &store.add(name + ".gamma", Shape{1, dim}, std::vector<double>(dim, 1.0));
  beta_ = &store.add(name + ".beta", Shape{1, dim}, std::vector<double>(dim, 0.0));
}

Tensor LayerNorm::operator()(Tape& tape, const Tensor& x) const {
  return layer_norm(x, tape.param(*gamma_), tape.param(*beta_));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t in,
                         std::size_t hidden, std::size_t out, Rng& rng)
    : first_(store, name + ".fc1", in, hidden, rng), second_(store, name + ".fc2", hidden, out, rng) {}

Tensor FeedForward::operator()(Tape& tape, const Tensor& x) const {
  return second_(tape, relu(first_(tape, x)));
}

AttentionMask AttentionMask::full(std::size_t rows, std::size_t cols) {
  return AttentionMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

AttentionMask AttentionMask::block_diagonal(const std::vector<std::size_t>& sizes) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  std::size_t start = 0;
  for (auto s : sizes) {
    for (std::size_t r = start; r < start + s; ++r)
      for (std::size_t c = start; c < start + s; ++c) m.allowed[r * n + c] = 1;
    start += s;
  }
  return m;
}

Tensor multi_head_attention(Tape& tape, const Tensor& queries, const Tensor& keys,
                            const Tensor& values, std::size_t heads, const Linear& wq,
                            const Linear& wk, const Linear& wv, const Linear& wo,
                            const AttentionMask* mask, const std::vector<Tensor>& bias) {
  const std::size_t nq = queries.rows();
  const std::size_t nk = keys.rows();
  const std::size_t dim = wq.out_features();
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (values.rows() != nk) throw ShapeError("attention: keys and values differ in length");
  if (queries.cols() != wq.in_features() || keys.cols() != wk.in_features() ||
      values.cols() != wv.in_features()) {
    throw ShapeError("attention: input widths do not match projections");
  }
  if (!bias.empty() && bias.size() != 1 && bias.size() != heads) {
    throw ShapeError("attention: expected 0, 1 or `heads` bias tensors");
  }
  for (const auto& b : bias) {
    if (b.shape() != Shape{nq, nk}) throw ShapeError("attention: bias shape " + b.shape().str());
  }

  std::optional<Tensor> mask_logits;
  if (mask != nullptr) {
    if (mask->rows != nq || mask->cols != nk) throw ShapeError("attention: mask shape mismatch");
    std::vector<double> m(nq * nk, 0.0);
    for (std::size_t r = 0; r < nq; ++r) {
      bool any = false;
      for (std::size_t c = 0; c < nk; ++c) {
        if ((*mask)(r, c)) {
          any = true;
        } else {
          m[r * nk + c] = -std::numeric_limits<double>::infinity();
        }
      }
      if (!any) throw std::invalid_argument("attention: query row " + std::to_string(r) + " fully masked");
    }
    mask_logits = tape.constant(Shape{nq, nk}, std::move(m));
  }

  const std::size_t dh = dim / heads;
  const std::vector<std::size_t> head_sizes(heads, dh);
  auto qh = split(wq(tape, queries), 1, head_sizes);
  auto kh = split(wk(tape, keys), 1, head_sizes);
  auto vh = split(wv(tape, values), 1, head_sizes);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor logits = scale(matmul(qh[h], transpose(kh[h])), inv_sqrt);
    if (!bias.empty()) logits = add(logits, bias.size() == 1 ? bias[0] : bias[h]);
    if (mask_logits) logits = add(logits, *mask_logits);
    outs.push_back(matmul(softmax(logits, 1), vh[h]));
  }
  Tensor joined = heads == 1 ? outs[0] : concat(outs, 1);
  return wo(tape, joined);
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t dim, std::size_t heads, Rng& rng)
    : MultiHeadAttention(store, name, dim, dim, heads, rng) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t dim, std::size_t kv_dim, std::size_t heads,
                                       Rng& rng)
    : wq_(store, name + ".q", dim, dim, rng),
      wk_(store, name + ".k", kv_dim, dim, rng),
      wv_(store, name + ".v", kv_dim, dim, rng),
      wo_(store, name + ".o", dim, dim, rng),
      dim_(dim),
      heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError(name + ": dim " + std::to_string(dim) + " not divisible by heads");
  }
}

Tensor MultiHeadAttention::operator()(Tape& tape, const Tensor& queries, const Tensor& keys,
                                      const Tensor& values, const AttentionMask* mask,
                                      const std::vector<Tensor>& bias) const {
  return multi_head_attention(tape, queries, keys, values, heads_, wq_, wk_, wv_, wo_, mask, bias);
}

}  // namespace dmad::ad
