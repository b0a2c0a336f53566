#include "disagree/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace disagree {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "unknown";
}

MlpParams MlpParams::zeros_like() const {
  MlpParams z;
  z.layers.reserve(layers.size());
  for (const Layer& l : layers) {
    z.layers.push_back(Layer{Tensor::Zero(l.weight.rows(), l.weight.cols()),
                             Tensor::Zero(1, l.bias.cols()), l.activation});
  }
  return z;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("mlp: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.fan_out()) {
      throw ShapeError("mlp layer " + std::to_string(i) + ": weight " +
                       shape_string(l.weight) + " with bias " + shape_string(l.bias));
    }
    if (i > 0 && layers[i - 1].fan_out() != l.fan_in()) {
      throw ShapeError("mlp layer " + std::to_string(i) + ": fan_in " +
                       std::to_string(l.fan_in()) + " does not match previous fan_out " +
                       std::to_string(layers[i - 1].fan_out()));
    }
  }
}

bool operator==(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const Layer& x = a.layers[i];
    const Layer& y = b.layers[i];
    if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
        x.weight.cols() != y.weight.cols() || x.bias.cols() != y.bias.cols()) {
      return false;
    }
    if (std::memcmp(x.weight.data(), y.weight.data(), sizeof(double) * static_cast<std::size_t>(x.weight.size())) != 0 ||
        std::memcmp(x.bias.data(), y.bias.data(), sizeof(double) * static_cast<std::size_t>(x.bias.size())) != 0) {
      return false;
    }
  }
  return true;
}

MlpParams make_mlp(std::span<const int> dims, std::span<const Activation> activations,
                   CounterRng& rng) {
  if (dims.size() < 2 || activations.size() + 1 != dims.size()) {
    throw std::invalid_argument("make_mlp: need n+1 dims for n activations");
  }
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    if (fan_in <= 0 || fan_out <= 0) throw ShapeError("make_mlp: dims must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Layer layer{Tensor(fan_in, fan_out), Tensor::Zero(1, fan_out), activations[i]};
    for (Index r = 0; r < fan_in; ++r) {
      for (Index c = 0; c < fan_out; ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpParams make_mlp(std::initializer_list<int> dims,
                   std::initializer_list<Activation> activations, CounterRng& rng) {
  return make_mlp(std::span<const int>(dims.begin(), dims.size()),
                  std::span<const Activation>(activations.begin(), activations.size()), rng);
}

namespace {

Tensor activate(Activation a, const Tensor& x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return kernels::relu(x);
    case Activation::Tanh: return kernels::tanh(x);
  }
  return x;
}

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh(x);
  }
  return x;
}

void check_input(const MlpParams& params, Index cols) {
  if (params.layers.empty()) throw ShapeError("mlp: no layers");
  if (cols != params.in_dim()) {
    throw ShapeError("mlp forward: input has " + std::to_string(cols) +
                     " columns, first layer expects " + std::to_string(params.in_dim()));
  }
}

void check_masks(const MlpParams& params, Index rows, std::span<const Tensor> masks) {
  if (masks.size() + 1 != params.layers.size()) {
    throw ShapeError("mlp forward: expected " + std::to_string(params.layers.size() - 1) +
                     " hidden masks, got " + std::to_string(masks.size()));
  }
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].rows() != rows || masks[i].cols() != params.layers[i].fan_out()) {
      throw ShapeError("mlp forward: mask " + std::to_string(i) + " is " +
                       shape_string(masks[i]) + ", expected " +
                       shape_string(rows, params.layers[i].fan_out()));
    }
  }
}

}  // namespace

Tensor forward(const MlpParams& params, const Tensor& input) {
  check_input(params, input.cols());
  Tensor h = input;
  for (const Layer& l : params.layers) {
    h = activate(l.activation, kernels::affine(h, l.weight, l.bias));
  }
  return h;
}

Tensor forward_masked(const MlpParams& params, const Tensor& input,
                      std::span<const Tensor> hidden_masks) {
  check_input(params, input.cols());
  check_masks(params, input.rows(), hidden_masks);
  Tensor h = input;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const Layer& l = params.layers[i];
    h = activate(l.activation, kernels::affine(h, l.weight, l.bias));
    if (i < hidden_masks.size()) h = h.cwiseProduct(hidden_masks[i]);
  }
  return h;
}

TracedMlp::TracedMlp(Tape& tape, const MlpParams& params, bool trainable)
    : tape_(&tape), params_(&params) {
  params.validate();
  for (const Layer& l : params.layers) {
    weights_.push_back(trainable ? tape.parameter(l.weight) : tape.constant(l.weight));
    biases_.push_back(trainable ? tape.parameter(l.bias) : tape.constant(l.bias));
  }
}

Var TracedMlp::operator()(Var input) const {
  check_input(*params_, input.cols());
  Var h = input;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = activate(params_->layers[i].activation, affine(h, weights_[i], biases_[i]));
  }
  return h;
}

Var TracedMlp::forward_masked(Var input, std::span<const Tensor> hidden_masks) const {
  check_input(*params_, input.cols());
  check_masks(*params_, input.rows(), hidden_masks);
  Var h = input;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = activate(params_->layers[i].activation, affine(h, weights_[i], biases_[i]));
    if (i < hidden_masks.size()) h = h * tape_->constant(hidden_masks[i]);
  }
  return h;
}

MlpParams TracedMlp::gradients() const {
  MlpParams g;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    g.layers.push_back(Layer{tape_->grad(weights_[i]), tape_->grad(biases_[i]),
                             params_->layers[i].activation});
  }
  return g;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("checkpoint: truncated header");
  }
  return v;
}

void put_values(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
}

void get_values(std::istream& in, Tensor& t) {
  if (!in.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())))) {
    throw std::runtime_error("checkpoint: truncated values");
  }
}

}  // namespace

void write_mlp(std::ostream& out, const MlpParams& params) {
  params.validate();
  put_u32(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const Layer& l : params.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.fan_in()));
    put_u32(out, static_cast<std::uint32_t>(l.fan_out()));
    put_u32(out, static_cast<std::uint32_t>(l.activation));
    put_values(out, l.weight);
    put_values(out, l.bias);
  }
}

MlpParams read_mlp(std::istream& in) {
  if (get_u32(in) != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in);
  if (count == 0 || count > 1024) throw std::runtime_error("checkpoint: bad layer count");
  MlpParams p;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t fan_in = get_u32(in);
    const std::uint32_t fan_out = get_u32(in);
    const std::uint32_t act = get_u32(in);
    if (fan_in == 0 || fan_out == 0 || fan_in > (1u << 20) || fan_out > (1u << 20) || act > 2) {
      throw std::runtime_error("checkpoint: bad layer header");
    }
    Layer l{Tensor(fan_in, fan_out), Tensor(1, fan_out), static_cast<Activation>(act)};
    get_values(in, l.weight);
    get_values(in, l.bias);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

void save_mlps(const std::string& path, std::span<const MlpParams> nets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const MlpParams& n : nets) write_mlp(out, n);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<MlpParams> load_mlps(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<MlpParams> nets;
  while (in.peek() != std::char_traits<char>::eof()) nets.push_back(read_mlp(in));
  if (nets.empty()) throw std::runtime_error("checkpoint: empty file " + path);
  return nets;
}

}  // namespace disagree
