#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmad/autodiff/tensor.hpp"
#include "dmad/model/config.hpp"
#include "dmad/model/layers.hpp"

namespace dmad::model {

// Track queries carried into a frame. Embeddings live on the frame's tape so
// gradients can flow through propagation inside one training sample.
struct CarriedQueries {
  Tensor obj;  // k x d
  Tensor mt;   // k x d, divided wiring only
  Points refs;
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
};

struct FrameInput {
  const sim::SensorTokenSet* tokens = nullptr;
  sim::Vec2 ego_position;
  CarriedQueries carried;
  // Multimodal and planning heads are skipped when false (stage 1).
  bool motion_heads = true;
  // Routes block-diagonal joint attention through the masked path; used to
  // check that masking and physical separation agree.
  bool force_mask = false;
};

struct LayerOutput {
  Points ref_in;      // reference points consumed by the semantic layer
  Points ref_export;  // stop-gradient box centers exported after the layer
  Points motion_refs; // reference points consumed by the motion layer (agents, then ego)
  BoxTensors boxes;
  MapTensors map;
  Tensor unimodal;    // N x 2W
};

struct FrameOutput {
  std::vector<LayerOutput> layers;
  std::vector<int> ids;                   // per slot, -1 for fresh queries
  std::vector<std::size_t> fresh_queries; // learned query index behind each fresh slot
  std::size_t carried = 0;                // slots [0, carried) are propagated tracks
  Tensor z;
  Tensor obj;       // final object queries
  Tensor mt;        // final agent motion queries (divided) or empty
  Tensor velocity;  // N x 2 from the configured source; empty for bbox-difference
  std::optional<MultimodalTensors> multimodal;
  Tensor plan;      // 1 x 2*plan_steps when motion heads ran
  // Execution order of measurement / update / prediction steps.
  std::vector<std::string> schedule;

  const LayerOutput& final() const { return layers.back(); }
  // s_1 of the final-layer unimodal trajectory per slot.
  Points next_references(std::size_t past_steps) const;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  FrameOutput forward(Tape& tape, const FrameInput& in) const;

  // F_propagate: identity followed by a shared layer norm.
  Tensor propagate_obj(Tape& tape, const Tensor& q) const { return obj_propagate_(tape, q); }
  Tensor propagate_mt(Tape& tape, const Tensor& q) const { return mt_propagate_(tape, q); }

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }
  const BoxHead& box_head() const { return box_head_; }

  // Learned queries that fill the slots not taken by carried tracks: for each
  // carried reference the nearest learned initial reference is dropped.
  std::vector<std::size_t> fresh_queries(const Points& carried) const;
  Points initial_references() const;

  double ref_clip() const { return cfg_.world_half_size + 10.0; }

 private:
  ModelConfig cfg_;
  ad::ParameterStore store_;
  TokenEncoder encoder_;
  ad::Parameter* obj_query_ = nullptr;
  ad::Parameter* ref_init_ = nullptr;
  ad::Parameter* map_query_ = nullptr;
  ad::Parameter* map_pos_ = nullptr;
  ad::Parameter* mt_query_ = nullptr;
  ad::Parameter* ego_query_ = nullptr;
  ad::Linear obj_pe_, mt_pe_;
  ad::LayerNorm obj_propagate_, mt_propagate_;
  std::vector<InteractiveLayer> semantic_;
  std::vector<MotionLayer> motion_;
  std::vector<JointAttention> interaction_;
  BoxHead box_head_;
  MapHead map_head_;
  UnimodalHead unimodal_;
  std::optional<ad::FeedForward> velocity_head_;
  MultimodalHead multimodal_;
  Planner planner_;
};

// Parameter groups by name prefix, used by the gradient audit.
inline constexpr const char* kEncoderGroup = "encoder.";
inline constexpr const char* kSemanticGroup = "semantic.";
inline constexpr const char* kMotionGroup = "motion.";
inline constexpr const char* kInteractionGroup = "interaction.";

}  // namespace dmad::model
