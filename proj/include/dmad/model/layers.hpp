#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "dmad/autodiff/nn.hpp"
#include "dmad/model/config.hpp"
#include "dmad/sim/episode.hpp"

namespace dmad::model {

using ad::Tape;
using ad::Tensor;

// Reference points are plain values: every consumer sees them through a
// gradient barrier, so they never need to live on a tape.
using Point3 = std::array<double, 3>;
using Points = std::vector<Point3>;

// sin/cos features of (x/R, y/R) at octave frequencies; 4*bands columns.
std::vector<double> fourier_features(const Points& pts, double half_size, std::size_t bands);

// -|ref_q - center_k|^2 * exp(log_scale_h) per head, added to cross-attention
// logits so each query prefers tokens near its reference point.
std::vector<Tensor> reference_bias(Tape& tape, const Points& refs, const std::vector<sim::Vec2>& centers,
                                   ad::Parameter& log_scale, std::size_t heads);

class TokenEncoder {
 public:
  TokenEncoder() = default;
  TokenEncoder(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);
  Tensor operator()(Tape& tape, const sim::SensorTokenSet& tokens) const;

 private:
  ad::FeedForward mlp_;
  ad::LayerNorm norm_;
  double half_size_ = 0.0;
  std::size_t bands_ = 0;
};

// Self-attention over several query sets at once. `allowed[i][j]` says whether
// set i may attend to set j; sets always see themselves. Groups of sets with
// no allowed pair between them run as physically separate attention calls;
// `force_mask` instead runs one call with the disallowed blocks masked.
class JointAttention {
 public:
  JointAttention() = default;
  JointAttention(ad::ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                 Rng& rng);

  std::vector<Tensor> operator()(Tape& tape, const std::vector<Tensor>& sets,
                                 const std::vector<std::vector<bool>>& allowed, bool force_mask = false) const;

 private:
  std::vector<Tensor> masked(Tape& tape, const std::vector<Tensor>& sets,
                             const std::vector<std::vector<bool>>& allowed) const;

  ad::MultiHeadAttention attn_;
  ad::LayerNorm norm_;
};

// One interactive semantic decoder layer: joint object+map self-attention,
// then per-set self-attention, cross-attention to the tokens and FFN, with a
// layer norm after each residual.
// Reference-biased cross-attention to the tokens that also returns, per head,
// the attention-weighted displacement of token centers from the reference
// point (in cells), projected into the query width and added to the output.
class LocatingAttention {
 public:
  LocatingAttention() = default;
  LocatingAttention(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& q, const Tensor& z, const Points& refs,
                    const std::vector<sim::Vec2>& centers, const std::vector<Tensor>& bias) const;

 private:
  ad::Linear wq_, wk_, wv_, wo_, wd_;
  std::size_t heads_ = 1;
  double cell_ = 1.0;
};

class InteractiveLayer {
 public:
  struct Output {
    Tensor obj;
    Tensor map;
  };

  InteractiveLayer() = default;
  InteractiveLayer(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

  // Rejects interaction flags that involve motion queries.
  Output operator()(Tape& tape, const Tensor& obj, const Tensor& map, const Tensor& z, const Points& refs,
                    const std::vector<sim::Vec2>& centers, const Interactions& flags,
                    bool force_mask = false) const;

 private:
  JointAttention joint_;
  ad::MultiHeadAttention obj_self_, map_self_, map_cross_;
  LocatingAttention obj_cross_;
  ad::LayerNorm obj_norm1_, obj_norm2_, obj_norm3_, map_norm1_, map_norm2_, map_norm3_;
  ad::FeedForward obj_ffn_, map_ffn_;
  ad::Parameter* ref_scale_ = nullptr;
  std::size_t heads_ = 1;
};

// Self-attention, reference-biased cross-attention to the tokens and FFN for
// motion queries (the ego query is the last row).
class MotionLayer {
 public:
  MotionLayer() = default;
  MotionLayer(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& mt, const Tensor& z, const Points& refs,
                    const std::vector<sim::Vec2>& centers) const;

 private:
  ad::MultiHeadAttention self_, cross_;
  ad::LayerNorm norm1_, norm2_, norm3_;
  ad::FeedForward ffn_;
  ad::Parameter* ref_scale_ = nullptr;
  std::size_t heads_ = 1;
};

// Differentiable pieces of a decoded box head output (N rows).
struct BoxTensors {
  Tensor offsets;    // N x 3
  Tensor log_size;   // N x 3, (w, h, l)
  Tensor sincos;     // N x 2
  Tensor logits;     // N x 3
  Tensor velocity;   // N x 2, regress-from-obj only
  Tensor centers;    // ref + offsets
};

// Box regression head; its width is fixed by the config, with no velocity
// channel unless velocity is regressed from object queries.
class BoxHead {
 public:
  BoxHead() = default;
  BoxHead(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

  // `ref` is N x 3; it enters only the additive center decode.
  BoxTensors operator()(Tape& tape, const Tensor& obj, const Tensor& ref) const;
  std::size_t width() const { return width_; }
  const ad::FeedForward& mlp() const { return mlp_; }

 private:
  ad::FeedForward mlp_;
  std::size_t width_ = 0;
  double scale_ = 1.0;
  bool velocity_ = false;
};

struct MapTensors {
  Tensor logits;    // N x 4
  Tensor vertices;  // N x 20, (x0, y0, x1, y1, ...)
};

class MapHead {
 public:
  static constexpr double kVertexScale = 10.0;

  MapHead() = default;
  MapHead(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);
  MapTensors operator()(Tape& tape, const Tensor& map) const;

 private:
  ad::FeedForward mlp_;
};

// Waypoints s_t for t in [-past, future], relative to the query's reference
// point: N x 2W with columns (x_{-past}, y_{-past}, ..., x_future, y_future).
class UnimodalHead {
 public:
  UnimodalHead() = default;
  UnimodalHead(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);
  Tensor operator()(Tape& tape, const Tensor& q, const Points& refs) const;

 private:
  ad::FeedForward mlp_;
  double scale_ = 1.0;
  std::size_t waypoints_ = 0;
};

struct MultimodalTensors {
  Tensor trajectories;  // N x (K * T * 2), mode-major
  Tensor confidences;   // N x K, rows sum to 1
};

class MultimodalHead {
 public:
  MultimodalHead() = default;
  MultimodalHead(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);
  MultimodalTensors operator()(Tape& tape, const Tensor& q, const Tensor& z, const Points& refs,
                               const std::vector<sim::Vec2>& centers) const;

 private:
  ad::MultiHeadAttention cross_;
  ad::LayerNorm norm_;
  ad::FeedForward mlp_;
  double scale_ = 1.0;
  ad::Parameter* ref_scale_ = nullptr;
  std::size_t modes_ = 0, steps_ = 0, heads_ = 1;
};

// Ego planner: the ego query reads the tokens around the ego and the agent
// queries, then an MLP emits waypoints as offsets from the ego position.
class Planner {
 public:
  Planner() = default;
  Planner(ad::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);
  Tensor operator()(Tape& tape, const Tensor& ego, const Tensor& agents, const Tensor& z, sim::Vec2 ego_pos,
                    const std::vector<sim::Vec2>& centers) const;

 private:
  ad::MultiHeadAttention token_attn_, agent_attn_;
  ad::LayerNorm norm1_, norm2_;
  ad::FeedForward mlp_;
  double scale_ = 1.0;
  ad::Parameter* ref_scale_ = nullptr;
  std::size_t steps_ = 0, heads_ = 1;
};

// v_0 = (s_1 - s_{-1}) / (2 dt) for every row of a unimodal output.
// Throws std::invalid_argument when the trajectory has no past waypoint.
Tensor velocity_from_trajectory(const Tensor& waypoints, std::size_t past_steps, double dt);

}  // namespace dmad::model
