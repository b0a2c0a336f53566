#pragma once

#include "disagree/rng.hpp"
#include "disagree/tape.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace disagree {

enum class Activation { Identity = 0, Relu = 1, Tanh = 2 };

std::string_view activation_name(Activation a);

struct Layer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out
  Activation activation = Activation::Identity;

  Index fan_in() const { return weight.rows(); }
  Index fan_out() const { return weight.cols(); }
};

/// Parameters of a fully connected network. Also used as the container for
/// gradients and optimizer moments, which share its layout.
struct MlpParams {
  std::vector<Layer> layers;

  Index in_dim() const { return layers.front().fan_in(); }
  Index out_dim() const { return layers.back().fan_out(); }
  std::size_t tensor_count() const { return 2 * layers.size(); }
  Tensor& tensor(std::size_t i) { return i % 2 == 0 ? layers[i / 2].weight : layers[i / 2].bias; }
  const Tensor& tensor(std::size_t i) const {
    return i % 2 == 0 ? layers[i / 2].weight : layers[i / 2].bias;
  }
  /// Same layout, all values zero.
  MlpParams zeros_like() const;
  /// Throws ShapeError if consecutive layers disagree on width.
  void validate() const;

  friend bool operator==(const MlpParams& a, const MlpParams& b);
};

/// Uniform Glorot init, zero biases. dims = {in, hidden..., out};
/// activations has dims.size() - 1 entries.
MlpParams make_mlp(std::span<const int> dims, std::span<const Activation> activations,
                   CounterRng& rng);
MlpParams make_mlp(std::initializer_list<int> dims,
                   std::initializer_list<Activation> activations, CounterRng& rng);

/// Untraced forward pass on an n x in_dim batch.
Tensor forward(const MlpParams& params, const Tensor& input);

/// Untraced forward pass with a multiplicative mask applied after each
/// hidden activation (inverted dropout). masks[i] is n x fan_out(i).
Tensor forward_masked(const MlpParams& params, const Tensor& input,
                      std::span<const Tensor> hidden_masks);

/// Network parameters bound to a tape, either as parameters (tracked) or as
/// constants (frozen).
class TracedMlp {
 public:
  TracedMlp(Tape& tape, const MlpParams& params, bool trainable);

  Var operator()(Var input) const;
  /// Same as operator() but multiplies each hidden activation by a mask.
  Var forward_masked(Var input, std::span<const Tensor> hidden_masks) const;

  /// Gradients in MlpParams layout, read after tape.backward().
  MlpParams gradients() const;

  const MlpParams& params() const { return *params_; }

 private:
  Tape* tape_;
  const MlpParams* params_;
  std::vector<Var> weights_;
  std::vector<Var> biases_;
};

// Checkpoint record: little-endian.
//   u32 magic 'DSGM' (0x4D475344), u32 version, u32 layer_count,
//   per layer: u32 fan_in, u32 fan_out, u32 activation,
//              f64[fan_in * fan_out] weight (row-major), f64[fan_out] bias.
inline constexpr std::uint32_t kCheckpointMagic = 0x4D475344u;
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_mlp(std::ostream& out, const MlpParams& params);
/// Throws std::runtime_error on a malformed or truncated record.
MlpParams read_mlp(std::istream& in);
void save_mlps(const std::string& path, std::span<const MlpParams> nets);
std::vector<MlpParams> load_mlps(const std::string& path);

}  // namespace disagree
