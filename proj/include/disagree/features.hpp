#pragma once

#include "disagree/envs.hpp"
#include "disagree/mlp.hpp"

#include <optional>
#include <string_view>

namespace disagree {

enum class EncoderKind { Identity, RandomNet };

std::string_view encoder_name(EncoderKind kind);
/// Accepts "identity" and "random-net"; throws std::invalid_argument otherwise.
EncoderKind parse_encoder(std::string_view name);

/// Fixed observation embedding used as the prediction space of every
/// forward model. A random-net encoder is drawn once and never trained;
/// encode() returns plain tensors, so no gradient can reach it.
class FeatureEncoder {
 public:
  static FeatureEncoder identity(int dim);
  /// d_obs -> hidden (relu) -> feat_dim (identity), Glorot init from rng.
  static FeatureEncoder random_net(int in_dim, int hidden, int feat_dim, CounterRng& rng);
  static FeatureEncoder from_params(MlpParams params);

  EncoderKind kind() const { return kind_; }
  int in_dim() const { return in_dim_; }
  int feat_dim() const { return feat_dim_; }
  /// Present for random-net encoders only.
  const std::optional<MlpParams>& params() const { return net_; }

  /// n x in_dim -> n x feat_dim. Throws ShapeError on a width mismatch.
  Tensor encode(const Tensor& batch) const;
  RowVector encode(const Observation& obs) const;

  /// Upper bound on ||encode(a) - encode(b)|| / ||a - b||: the product of the
  /// layer spectral norms (relu is 1-Lipschitz).
  double lipschitz_bound() const;

 private:
  EncoderKind kind_ = EncoderKind::Identity;
  int in_dim_ = 0;
  int feat_dim_ = 0;
  std::optional<MlpParams> net_;
};

}  // namespace disagree
