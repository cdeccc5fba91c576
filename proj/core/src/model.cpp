#include "nowcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nowcast/error.hpp"

namespace nowcast {

std::string to_string(ChannelMode mode) { return mode == ChannelMode::All ? "all" : "physics-only"; }
std::string to_string(GraphMode mode) { return mode == GraphMode::Full ? "full" : "edgeless"; }

ChannelMode parse_channel_mode(const std::string& text) {
  if (text == "all") return ChannelMode::All;
  if (text == "physics-only") return ChannelMode::PhysicsOnly;
  throw UsageError("unknown channel mode '" + text + "' (expected all or physics-only)");
}

GraphMode parse_graph_mode(const std::string& text) {
  if (text == "full") return GraphMode::Full;
  if (text == "edgeless") return GraphMode::Edgeless;
  throw UsageError("unknown graph mode '" + text + "' (expected full or edgeless)");
}

void ModelConfig::validate() const {
  if (nodes < 1) throw UsageError("model: node count must be positive");
  if (in_channels < 1) throw UsageError("model: input channel count must be positive");
  if (block_channels.empty()) throw UsageError("model: need at least one ST block");
  for (auto c : block_channels)
    if (c < 1) throw UsageError("model: block channel widths must be positive");
  if (cheb_order < 1) throw UsageError("model: Chebyshev order must be >= 1");
  if (kernel_width % 2 == 0) throw UsageError("model: temporal kernel width must be odd");
  if (window < 1) throw UsageError("model: window must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("model: dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-r, r);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor glorot_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return glorot({rows, cols}, rows, cols, rng);
}

Tensor copy_leaf(const Tensor& t) {
  return Tensor::from(t.shape(), {t.values().begin(), t.values().end()}, t.requires_grad());
}

Tensor permute_square(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t n = perm.size();
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = t.values()[perm[i] * n + perm[j]];
  return Tensor::from(t.shape(), std::move(v), t.requires_grad());
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t cols = t.dim(1);
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) v[i * cols + j] = t.values()[perm[i] * cols + j];
  return Tensor::from(t.shape(), std::move(v), t.requires_grad());
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ModelParams p;
  p.config = config;
  const std::size_t n = config.nodes, tau = config.window;
  std::size_t c_in = config.in_channels;
  for (std::size_t c_out : config.block_channels) {
    STBlockParams b;
    b.in_channels = c_in;
    b.out_channels = c_out;
    if (config.attention) {
      b.spatial_gate = glorot_matrix(n, n, rng);
      b.spatial_bias = Tensor::zeros({n, n}, true);
      b.spatial_time = glorot_matrix(tau, 1, rng);
      b.spatial_mix = glorot_matrix(c_in, tau, rng);
      b.spatial_channel = glorot_matrix(c_in, 1, rng);
      b.temporal_gate = glorot_matrix(tau, tau, rng);
      b.temporal_bias = Tensor::zeros({tau, tau}, true);
      b.temporal_node = glorot_matrix(n, 1, rng);
      b.temporal_mix = glorot_matrix(n, c_in, rng);
      b.temporal_channel = glorot_matrix(c_in, 1, rng);
    }
    for (int k = 0; k < config.cheb_order; ++k) b.cheb_weights.push_back(glorot_matrix(c_in, c_out, rng));
    b.time_kernel = glorot({config.kernel_width, c_out, c_out}, config.kernel_width * c_out,
                           config.kernel_width * c_out, rng);
    p.blocks.push_back(std::move(b));
    c_in = c_out;
  }
  p.head_weights = glorot_matrix(c_in * tau, 3, rng);
  p.head_bias = Tensor::zeros({3}, true);
  return p;
}

std::vector<NamedParam> ModelParams::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto& b = blocks[l];
    const std::string pre = "block" + std::to_string(l) + ".";
    if (config.attention) {
      out.push_back({pre + "spatial_gate", &b.spatial_gate});
      out.push_back({pre + "spatial_bias", &b.spatial_bias});
      out.push_back({pre + "spatial_time", &b.spatial_time});
      out.push_back({pre + "spatial_mix", &b.spatial_mix});
      out.push_back({pre + "spatial_channel", &b.spatial_channel});
      out.push_back({pre + "temporal_gate", &b.temporal_gate});
      out.push_back({pre + "temporal_bias", &b.temporal_bias});
      out.push_back({pre + "temporal_node", &b.temporal_node});
      out.push_back({pre + "temporal_mix", &b.temporal_mix});
      out.push_back({pre + "temporal_channel", &b.temporal_channel});
    }
    for (std::size_t k = 0; k < b.cheb_weights.size(); ++k) {
      out.push_back({pre + "cheb_weights." + std::to_string(k), &b.cheb_weights[k]});
    }
    out.push_back({pre + "time_kernel", &b.time_kernel});
  }
  out.push_back({"head_weights", &head_weights});
  out.push_back({"head_bias", &head_bias});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& np : const_cast<ModelParams*>(this)->parameters()) out.emplace_back(np.name, np.tensor);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams p = *this;
  for (auto& np : p.parameters()) *np.tensor = copy_leaf(*np.tensor);
  return p;
}

ModelParams ModelParams::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != config.nodes) throw UsageError("ModelParams::permuted: size mismatch");
  ModelParams p = clone();
  if (!config.attention) return p;
  for (auto& b : p.blocks) {
    b.spatial_gate = permute_square(b.spatial_gate, perm);
    b.spatial_bias = permute_square(b.spatial_bias, perm);
    b.temporal_node = permute_rows(b.temporal_node, perm);
    b.temporal_mix = permute_rows(b.temporal_mix, perm);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Layers

GraphOperators GraphOperators::from(const RegionGraph& graph, int order) {
  if (graph.cheb_order() < order) throw UsageError("graph carries fewer Chebyshev terms than the model needs");
  const auto& nodes = graph.nodes();
  std::vector<std::size_t> canonical(nodes.size());
  std::iota(canonical.begin(), canonical.end(), 0);
  std::stable_sort(canonical.begin(), canonical.end(),
                   [&](std::size_t a, std::size_t b) { return nodes[a].id < nodes[b].id; });
  GraphOperators ops;
  if (!std::is_sorted(canonical.begin(), canonical.end())) ops.order = canonical;
  for (int k = 0; k < order; ++k) {
    const auto& t = graph.cheb_basis()[static_cast<std::size_t>(k)];
    ops.cheb.push_back(ops.order.empty() ? t.to_tensor() : permuted(t, ops.order).to_tensor());
  }
  return ops;
}

namespace {

void require_input(const Tensor& x, std::size_t nodes, std::size_t channels, std::size_t steps, const char* where) {
  if (x.rank() != 3 || x.dim(0) != nodes || x.dim(1) != channels || x.dim(2) != steps) {
    throw UsageError(std::string(where) + ": input " + shape_str(x.shape()) + " does not match [" +
                     std::to_string(nodes) + "," + std::to_string(channels) + "," + std::to_string(steps) + "]");
  }
}

}  // namespace

Tensor spatial_attention(const Tensor& x, const STBlockParams& b) {
  const std::size_t n = b.spatial_gate.dim(0), c = b.spatial_channel.dim(0), tau = b.spatial_time.dim(0);
  require_input(x, n, c, tau, "spatial_attention");
  Tensor lhs = matmul(reshape(mode_product(x, b.spatial_time, 2), {n, c}), b.spatial_mix);  // [N, tau]
  Tensor rhs = reshape(mode_product(x, b.spatial_channel, 1), {n, tau});                   // [N, tau]
  Tensor scores = add(matmul(lhs, transpose(rhs)), b.spatial_bias);
  return softmax(mul(b.spatial_gate, sigmoid(scores)), 1);
}

Tensor temporal_attention(const Tensor& x, const STBlockParams& b) {
  const std::size_t n = b.temporal_node.dim(0), c = b.temporal_channel.dim(0), tau = b.temporal_gate.dim(0);
  require_input(x, n, c, tau, "temporal_attention");
  Tensor lhs = transpose(reshape(mode_product(x, b.temporal_node, 0), {c, tau}));  // [tau, C]
  lhs = matmul(lhs, transpose(b.temporal_mix));                                    // [tau, N]
  Tensor rhs = reshape(mode_product(x, b.temporal_channel, 1), {n, tau});          // [N, tau]
  Tensor scores = add(matmul(lhs, rhs), b.temporal_bias);
  return softmax(mul(b.temporal_gate, sigmoid(scores)), 1);
}

Tensor cheb_graph_conv(const Tensor& x, const std::vector<Tensor>& cheb, const Tensor& attention,
                       const std::vector<Tensor>& theta) {
  if (cheb.size() != theta.size() || cheb.empty()) {
    throw UsageError("cheb_graph_conv: " + std::to_string(cheb.size()) + " basis matrices but " +
                     std::to_string(theta.size()) + " coefficient matrices");
  }
  Tensor out;
  for (std::size_t k = 0; k < cheb.size(); ++k) {
    const Tensor filter = attention.defined() ? mul(cheb[k], attention) : cheb[k];
    // (filter X_t) theta_k for every t: mix nodes, then channels.
    Tensor term = mode_product(mode_product(x, transpose(filter), 0), theta[k], 1);
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

Tensor temporal_conv(const Tensor& y, const Tensor& kernel, double dropout, const ForwardOptions& options) {
  Tensor out = relu(conv_time(relu(y), kernel));
  if (options.training && dropout > 0.0) {
    if (!options.rng) throw UsageError("temporal_conv: dropout in training mode needs an RNG");
    std::bernoulli_distribution keep(1.0 - dropout);
    std::vector<double> mask(out.numel());
    const double scale_kept = 1.0 / (1.0 - dropout);
    for (auto& m : mask) m = keep(*options.rng) ? scale_kept : 0.0;
    out = mul(out, Tensor::from(out.shape(), std::move(mask)));
  }
  return out;
}

Tensor st_block(const Tensor& x, const STBlockParams& b, const GraphOperators& ops, const ModelConfig& config,
                const ForwardOptions& options) {
  require_input(x, config.nodes, b.in_channels, config.window, "st_block");
  Tensor reweighted = x;
  Tensor spatial;
  if (config.attention) {
    const Tensor temporal = temporal_attention(x, b);
    reweighted = mode_product(x, transpose(temporal), 2);
    spatial = spatial_attention(reweighted, b);
  }
  const Tensor conv = cheb_graph_conv(reweighted, ops.cheb, spatial, b.cheb_weights);
  return temporal_conv(conv, b.time_kernel, config.dropout, options);
}

namespace {

ForwardResult forward_canonical(const Tensor& x, const GraphOperators& ops, const ModelParams& params,
                                const ForwardOptions& options) {
  const auto& cfg = params.config;
  Tensor h = x;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    try {
      h = st_block(h, params.blocks[l], ops, cfg, options);
    } catch (const DomainError& e) {
      throw DomainError("ST block " + std::to_string(l) + ": " + e.what());
    }
  }
  ForwardResult r;
  try {
    const std::size_t features = h.dim(1) * h.dim(2);
    r.logits = add_bias(matmul(reshape(h, {cfg.nodes, features}), params.head_weights), params.head_bias, 1);
    r.probs = softmax(r.logits, 1);
  } catch (const DomainError& e) {
    throw DomainError(std::string("output head: ") + e.what());
  }
  return r;
}

}  // namespace

ForwardResult forward(const Tensor& x, const GraphOperators& ops, const ModelParams& params,
                      const ForwardOptions& options) {
  const auto& cfg = params.config;
  require_input(x, cfg.nodes, cfg.in_channels, cfg.window, "forward");
  if (ops.cheb.size() != static_cast<std::size_t>(cfg.cheb_order) || ops.cheb.front().dim(0) != cfg.nodes) {
    throw UsageError("forward: graph operators do not match the model");
  }
  if (ops.order.empty()) return forward_canonical(x, ops, params, options);

  // Run in canonical node order so results do not depend on how nodes are stored.
  const auto& order = ops.order;
  ModelParams view = params;
  if (cfg.attention) {
    for (auto& b : view.blocks) {
      b.spatial_gate = permute_axis(permute_axis(b.spatial_gate, order, 0), order, 1);
      b.spatial_bias = permute_axis(permute_axis(b.spatial_bias, order, 0), order, 1);
      b.temporal_node = permute_axis(b.temporal_node, order, 0);
      b.temporal_mix = permute_axis(b.temporal_mix, order, 0);
    }
  }
  const auto r = forward_canonical(permute_axis(x, order, 0), ops, view, options);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
  return {permute_axis(r.logits, inverse, 0), permute_axis(r.probs, inverse, 0)};
}

ForwardResult forward(const Tensor& x, const RegionGraph& graph, const ModelParams& params,
                      const ForwardOptions& options) {
  if (graph.size() != params.config.nodes) throw UsageError("forward: graph size does not match the model");
  return forward(x, GraphOperators::from(graph, params.config.cheb_order), params, options);
}

}  // namespace nowcast
