#include "disagree/features.hpp"

#include <Eigen/SVD>

#include <stdexcept>
#include <string>

namespace disagree {

std::string_view encoder_name(EncoderKind kind) {
  return kind == EncoderKind::Identity ? "identity" : "random-net";
}

EncoderKind parse_encoder(std::string_view name) {
  if (name == "identity") return EncoderKind::Identity;
  if (name == "random-net") return EncoderKind::RandomNet;
  throw std::invalid_argument("unknown encoder '" + std::string(name) +
                              "'; known: identity, random-net");
}

FeatureEncoder FeatureEncoder::identity(int dim) {
  if (dim < 1) throw ShapeError("identity encoder: dim must be positive");
  FeatureEncoder e;
  e.kind_ = EncoderKind::Identity;
  e.in_dim_ = dim;
  e.feat_dim_ = dim;
  return e;
}

FeatureEncoder FeatureEncoder::random_net(int in_dim, int hidden, int feat_dim, CounterRng& rng) {
  return from_params(make_mlp({in_dim, hidden, feat_dim}, {Activation::Relu, Activation::Identity}, rng));
}

FeatureEncoder FeatureEncoder::from_params(MlpParams params) {
  params.validate();
  FeatureEncoder e;
  e.kind_ = EncoderKind::RandomNet;
  e.in_dim_ = static_cast<int>(params.in_dim());
  e.feat_dim_ = static_cast<int>(params.out_dim());
  e.net_ = std::move(params);
  return e;
}

Tensor FeatureEncoder::encode(const Tensor& batch) const {
  if (batch.cols() != in_dim_) {
    throw ShapeError("encode: observation width " + std::to_string(batch.cols()) +
                     ", encoder expects " + std::to_string(in_dim_));
  }
  if (!net_) return batch;
  return forward(*net_, batch);
}

RowVector FeatureEncoder::encode(const Observation& obs) const {
  const Tensor out = encode(Tensor(obs));
  return out.row(0);
}

double FeatureEncoder::lipschitz_bound() const {
  if (!net_) return 1.0;
  double bound = 1.0;
  for (const Layer& l : net_->layers) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(l.weight);
    bound *= svd.singularValues()(0);
  }
  return bound;
}

}  // namespace disagree
