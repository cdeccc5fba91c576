#pragma once

// Attention-based spatial-temporal graph convolutional network.
//
// Input  X: [N, 6, T_in] normalised features for one window.
// Block l: [N, C_l, tau] -> [N, C_{l+1}, tau]
//   1. temporal attention E (tau x tau, row-stochastic) re-weights the time
//      axis: X^[n, c, t] = sum_s E[t, s] X[n, c, s]
//   2. spatial attention S (N x N, row-stochastic) from X^
//   3. Chebyshev graph convolution with each T_k masked by S (Hadamard)
//   4. ReLU, same-length temporal convolution, ReLU, dropout (training only)
// Head: per-node flatten [C_L * tau] -> 3 logits -> softmax.
// The head and all channel weights are shared across nodes; only the
// attention parameters are indexed by node.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nowcast/graph.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

enum class ChannelMode { All, PhysicsOnly };
enum class GraphMode { Full, Edgeless };

std::string to_string(ChannelMode mode);
std::string to_string(GraphMode mode);
ChannelMode parse_channel_mode(const std::string& text);
GraphMode parse_graph_mode(const std::string& text);

struct ModelConfig {
  std::size_t nodes = 0;
  std::size_t in_channels = 6;
  std::vector<std::size_t> block_channels = {32, 32, 32};
  int cheb_order = 3;
  std::size_t kernel_width = 3;
  std::size_t window = 12;  // T_in, 6 h of 30-minute steps
  std::size_t horizon = 1;  // predict the label this many steps after the window end
  double dropout = 0.0;
  std::uint64_t seed = 1;
  bool attention = true;  // false: no attention re-weighting, plain Chebyshev filters
  GraphMode graph = GraphMode::Full;
  ChannelMode channels = ChannelMode::All;

  void validate() const;
};

struct STBlockParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  // Spatial attention: S = gate ⊙ sigmoid((X w_time) mix (w_chan X)^T + bias)
  Tensor spatial_gate;     // [N, N]
  Tensor spatial_bias;     // [N, N]
  Tensor spatial_time;     // [tau, 1]
  Tensor spatial_mix;      // [C, tau]
  Tensor spatial_channel;  // [C, 1]
  // Temporal attention: E = gate ⊙ sigmoid((X^T u_node) mix^T (u_chan X) + bias)
  Tensor temporal_gate;     // [tau, tau]
  Tensor temporal_bias;     // [tau, tau]
  Tensor temporal_node;     // [N, 1]
  Tensor temporal_mix;      // [N, C]
  Tensor temporal_channel;  // [C, 1]
  std::vector<Tensor> cheb_weights;  // K x [C, C']
  Tensor time_kernel;                // [width, C', C']
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct ModelParams {
  ModelConfig config;
  std::vector<STBlockParams> blocks;
  Tensor head_weights;  // [C_L * tau, 3]
  Tensor head_bias;     // [3]

  /// Glorot-uniform weights from config.seed, zero biases.
  static ModelParams init(const ModelConfig& config);

  /// Every learnable tensor in a fixed order.
  std::vector<NamedParam> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  /// Deep copy (fresh leaves, no gradients).
  ModelParams clone() const;
  /// Node-indexed parameters relabelled so that new node i is old node perm[i].
  ModelParams permuted(const std::vector<std::size_t>& perm) const;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required when training with dropout > 0
};

struct ForwardResult {
  Tensor logits;  // [N, 3]
  Tensor probs;   // [N, 3]
};

/// Graph operators as constant tensors, built once per graph.
/// Operators are kept in canonical node order (sorted by node id); `order`
/// maps canonical position to storage position and is empty when the two
/// agree. forward() permutes in and out, so floating-point summation order,
/// and hence the logits, never depend on how the nodes happen to be stored.
struct GraphOperators {
  std::vector<Tensor> cheb;  // T_k(L~), [N, N], canonical order
  std::vector<std::size_t> order;
  static GraphOperators from(const RegionGraph& graph, int order);
};

Tensor spatial_attention(const Tensor& x, const STBlockParams& block);
Tensor temporal_attention(const Tensor& x, const STBlockParams& block);
/// sum_k ((T_k ⊙ S) X_t) theta_k for every t. `attention` may be undefined,
/// in which case the T_k are used unmasked.
Tensor cheb_graph_conv(const Tensor& x, const std::vector<Tensor>& cheb, const Tensor& attention,
                       const std::vector<Tensor>& theta);
/// ReLU, temporal convolution, ReLU, then dropout when training.
Tensor temporal_conv(const Tensor& y, const Tensor& kernel, double dropout, const ForwardOptions& options);

Tensor st_block(const Tensor& x, const STBlockParams& block, const GraphOperators& ops, const ModelConfig& config,
                const ForwardOptions& options);

ForwardResult forward(const Tensor& x, const GraphOperators& ops, const ModelParams& params,
                      const ForwardOptions& options = {});
ForwardResult forward(const Tensor& x, const RegionGraph& graph, const ModelParams& params,
                      const ForwardOptions& options = {});

}  // namespace nowcast
