#include "dhh/nets/mlp.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace dhh::nets {

using diffcore::Bindings;
using diffcore::Graph;
using diffcore::Shape;

void MlpConfig::validate() const {
  if (input_dim <= 0 || output_dim <= 0) {
    throw std::invalid_argument(
        fmt::format("mlp dimensions must be positive (in={}, out={})", input_dim, output_dim));
  }
  for (int w : hidden) {
    if (w <= 0) throw std::invalid_argument("mlp hidden layer of zero width");
  }
}

int MlpConfig::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden.at(layer - 1);
}

int MlpConfig::fan_out(std::size_t layer) const {
  return layer == hidden.size() ? output_dim : hidden.at(layer);
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool NetworkParams::all_finite() const {
  for (const Layer& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

NetworkParams init_params(const MlpConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  NetworkParams params;
  for (std::size_t k = 0; k < config.layer_count(); ++k) {
    const int in = config.fan_in(k);
    const int out = config.fan_out(k);
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    Layer layer{Matrix(out, in), Vector::Zero(out)};
    // row-major fill so the draw order matches the checkpoint layout
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) layer.weight(i, j) = u(rng);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void check_params(const MlpConfig& config, const NetworkParams& params) {
  config.validate();
  if (params.layers.size() != config.layer_count()) {
    throw std::invalid_argument(fmt::format("expected {} layers, got {}", config.layer_count(),
                                            params.layers.size()));
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const Layer& l = params.layers[k];
    if (l.weight.rows() != config.fan_out(k) || l.weight.cols() != config.fan_in(k) ||
        l.bias.size() != config.fan_out(k)) {
      throw std::invalid_argument(fmt::format(
          "layer {}: expected weight {}x{} and bias {}, got {}x{} and {}", k, config.fan_out(k),
          config.fan_in(k), config.fan_out(k), l.weight.rows(), l.weight.cols(), l.bias.size()));
    }
  }
}

std::vector<NodeId> MlpSlots::all() const {
  std::vector<NodeId> out;
  out.reserve(weights.size() * 2);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out.push_back(weights[k]);
    out.push_back(biases[k]);
  }
  return out;
}

MlpSlots declare_params(Graph& graph, const MlpConfig& config, std::string_view prefix) {
  config.validate();
  MlpSlots slots;
  for (std::size_t k = 0; k < config.layer_count(); ++k) {
    slots.weights.push_back(graph.input(fmt::format("{}.W{}", prefix, k),
                                        Shape{config.fan_out(k), config.fan_in(k)}));
    slots.biases.push_back(
        graph.input(fmt::format("{}.b{}", prefix, k), Shape{config.fan_out(k), 1}));
  }
  return slots;
}

void bind_params(Bindings& bindings, const MlpSlots& slots, const NetworkParams& params) {
  if (params.layers.size() != slots.weights.size()) {
    throw std::invalid_argument("parameter/slot layer count mismatch");
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    bindings.bind(slots.weights[k], params.layers[k].weight);
    bindings.bind(slots.biases[k], params.layers[k].bias);
  }
}

NodeId forward(Graph& graph, const MlpConfig& config, const MlpSlots& slots, NodeId input) {
  const Shape in = graph.shape(input);
  if (in.rows != config.input_dim) {
    throw diffcore::ShapeError(fmt::format("network expects {} input rows, got {}",
                                           config.input_dim, in.rows));
  }
  NodeId h = input;
  for (std::size_t k = 0; k < config.layer_count(); ++k) {
    NodeId z = graph.matmul(slots.weights[k], h);
    z = graph.add(z, graph.broadcast(slots.biases[k], graph.shape(z)));
    h = (k + 1 < config.layer_count()) ? graph.tanh(z) : z;
  }
  return h;
}

std::vector<NodeId> input_jacobian(Graph& graph, NodeId output, NodeId input) {
  const Shape out = graph.shape(output);
  std::vector<NodeId> rows;
  rows.reserve(static_cast<std::size_t>(out.rows));
  const NodeId wrt[] = {input};
  for (diffcore::Index k = 0; k < out.rows; ++k) {
    // Columns are independent, so the gradient of the column-sum of one
    // output row is that row's per-sample Jacobian.
    NodeId component = graph.sum(graph.slice_rows(output, k, 1));
    rows.push_back(graph.gradient(component, wrt)[0]);
  }
  return rows;
}

NodeId input_jvp(Graph& graph, NodeId output, NodeId input, NodeId direction) {
  if (graph.shape(direction) != graph.shape(input)) {
    throw diffcore::ShapeError("input_jvp: direction must match the input shape");
  }
  // g(u) = d/d input <u, output> is linear in u, and d/du <g(u), v> = J v.
  // The probe value is therefore irrelevant; it only has to be a node the
  // builder cannot fold away.
  const Shape out = graph.shape(output);
  NodeId probe = graph.constant(Matrix::Constant(out.rows, out.cols, 0.5));
  NodeId inner = graph.sum(graph.mul(probe, output));
  const NodeId wrt_input[] = {input};
  NodeId vjp = graph.gradient(inner, wrt_input)[0];
  NodeId outer = graph.sum(graph.mul(vjp, direction));
  const NodeId wrt_probe[] = {probe};
  return graph.gradient(outer, wrt_probe)[0];
}

std::vector<Matrix> flatten(const NetworkParams& params) {
  std::vector<Matrix> out;
  out.reserve(params.layers.size() * 2);
  for (const Layer& l : params.layers) {
    out.push_back(l.weight);
    out.emplace_back(l.bias);
  }
  return out;
}

NetworkParams unflatten(const MlpConfig& config, const std::vector<Matrix>& flat) {
  if (flat.size() != config.layer_count() * 2) {
    throw std::invalid_argument("unflatten: wrong number of parameter blocks");
  }
  NetworkParams params;
  for (std::size_t k = 0; k < config.layer_count(); ++k) {
    params.layers.push_back(Layer{flat[2 * k], flat[2 * k + 1].col(0)});
  }
  check_params(config, params);
  return params;
}

// ---------------------------------------------------------------------------

CompiledMlp::CompiledMlp(MlpConfig config, NetworkParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  check_params(config_, params_);
}

const CompiledMlp::Compiled& CompiledMlp::compiled(diffcore::Index batch) const {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(batch);
  if (it != cache_.end()) return *it->second;

  auto graph = std::make_shared<Graph>();
  auto c = std::make_unique<Compiled>();
  c->slots = declare_params(*graph, config_, "net");
  c->input = graph->input("x", Shape{config_.input_dim, batch});
  NodeId out = nets::forward(*graph, config_, c->slots, c->input);
  std::vector<NodeId> outputs{out};
  for (NodeId row : input_jacobian(*graph, out, c->input)) outputs.push_back(row);
  c->program = std::make_unique<diffcore::Program>(std::move(graph), std::move(outputs));
  return *cache_.emplace(batch, std::move(c)).first->second;
}

Bindings CompiledMlp::bindings(const Compiled& c, const Matrix& inputs) const {
  Bindings b;
  bind_params(b, c.slots, params_);
  b.bind(c.input, inputs);
  return b;
}

Matrix CompiledMlp::forward(const Matrix& inputs) const {
  if (inputs.rows() != config_.input_dim) {
    throw diffcore::ShapeError(fmt::format("network expects {} input rows, got {}",
                                           config_.input_dim, inputs.rows()));
  }
  // A plain affine/tanh sweep; the compiled graph is only needed for the
  // Jacobian.
  Matrix h = inputs;
  for (std::size_t k = 0; k < params_.layers.size(); ++k) {
    Matrix z = params_.layers[k].weight * h;
    z.colwise() += params_.layers[k].bias;
    h = (k + 1 < params_.layers.size()) ? Matrix(z.array().tanh().matrix()) : z;
  }
  return h;
}

std::vector<Matrix> CompiledMlp::jacobian(const Matrix& inputs) const {
  if (inputs.rows() != config_.input_dim) {
    throw diffcore::ShapeError(fmt::format("network expects {} input rows, got {}",
                                           config_.input_dim, inputs.rows()));
  }
  const Compiled& c = compiled(inputs.cols());
  std::vector<Matrix> all = c.program->run(bindings(c, inputs));
  all.erase(all.begin());
  return all;
}

Vector CompiledMlp::forward(const Vector& input) const {
  return forward(Matrix(input)).col(0);
}

Matrix CompiledMlp::jacobian(const Vector& input) const {
  std::vector<Matrix> rows = jacobian(Matrix(input));
  Matrix j(config_.output_dim, config_.input_dim);
  for (int k = 0; k < config_.output_dim; ++k) j.row(k) = rows[static_cast<std::size_t>(k)].col(0).transpose();
  return j;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const MlpConfig& config) {
  return {{"input_dim", config.input_dim},
          {"output_dim", config.output_dim},
          {"hidden", config.hidden},
          {"activation", "tanh"}};
}

MlpConfig config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.output_dim = j.at("output_dim").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  const std::string act = j.value("activation", "tanh");
  if (act != "tanh") throw std::invalid_argument(fmt::format("unsupported activation '{}'", act));
  c.validate();
  return c;
}

nlohmann::json to_json(const MlpConfig& config, const NetworkParams& params) {
  check_params(config, params);
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : params.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) row.push_back(l.weight(i, j));
      w.push_back(std::move(row));
    }
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"weight", std::move(w)}, {"bias", std::move(b)}});
  }
  return {{"config", to_json(config)}, {"layers", std::move(layers)}};
}

NetworkParams params_from_json(const nlohmann::json& j, const MlpConfig& config) {
  NetworkParams params;
  for (const auto& lj : j.at("layers")) {
    const auto& w = lj.at("weight");
    const auto rows = static_cast<Eigen::Index>(w.size());
    const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(w[0].size());
    Layer l{Matrix(rows, cols), Vector()};
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (static_cast<Eigen::Index>(w[i].size()) != cols) {
        throw std::invalid_argument("ragged weight matrix in checkpoint");
      }
      for (Eigen::Index c = 0; c < cols; ++c) l.weight(i, c) = w[i][c].get<double>();
    }
    const auto b = lj.at("bias").get<std::vector<double>>();
    l.bias = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    params.layers.push_back(std::move(l));
  }
  check_params(config, params);
  return params;
}

}  // namespace dhh::nets
