#include "mllc/layers.hpp"

#include "mllc/npy.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace mllc {

namespace {

constexpr double kRenormFloor = 1e-12;

void apply_activation(Activation act, const Matrixd& pre, Matrixd& out) {
  switch (act) {
    case Activation::identity:
      out = pre;
      return;
    case Activation::leaky_relu:
      out = pre.unaryExpr([](double z) { return z > 0.0 ? z : kLeakySlope * z; });
      return;
    case Activation::softmax_rows: {
      out.resizeLike(pre);
      for (Index i = 0; i < pre.rows(); ++i) {
        const double shift = pre.row(i).maxCoeff();
        Eigen::RowVectorXd e = (pre.row(i).array() - shift).exp();
        out.row(i) = e / e.sum();
      }
      return;
    }
    case Activation::renorm_rows: {
      out.resizeLike(pre);
      for (Index i = 0; i < pre.rows(); ++i) {
        const double sum = std::max(pre.row(i).sum(), kRenormFloor);
        out.row(i) = pre.row(i) / sum;
      }
      return;
    }
  }
  throw ContractError("unknown activation");
}

Matrixd activation_backward(Activation act, const MlpCache& cache, const Matrixd& upstream) {
  switch (act) {
    case Activation::identity:
      return upstream;
    case Activation::leaky_relu: {
      Matrixd dz = upstream;
      for (Index i = 0; i < dz.rows(); ++i) {
        for (Index j = 0; j < dz.cols(); ++j) {
          if (cache.pre(i, j) <= 0.0) dz(i, j) *= kLeakySlope;
        }
      }
      return dz;
    }
    case Activation::softmax_rows: {
      Matrixd dz(upstream.rows(), upstream.cols());
      for (Index i = 0; i < upstream.rows(); ++i) {
        const double dot = upstream.row(i).dot(cache.output.row(i));
        dz.row(i) = (cache.output.row(i).array() * (upstream.row(i).array() - dot)).matrix();
      }
      return dz;
    }
    case Activation::renorm_rows: {
      Matrixd dz(upstream.rows(), upstream.cols());
      for (Index i = 0; i < upstream.rows(); ++i) {
        const double raw_sum = cache.pre.row(i).sum();
        if (raw_sum < kRenormFloor) {  // clamped: the denominator is constant
          dz.row(i) = upstream.row(i) / kRenormFloor;
          continue;
        }
        const double dot = upstream.row(i).dot(cache.output.row(i));
        dz.row(i) = ((upstream.row(i).array() - dot) / raw_sum).matrix();
      }
      return dz;
    }
  }
  throw ContractError("unknown activation");
}

}  // namespace

std::string to_string(Activation act) {
  switch (act) {
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::softmax_rows: return "softmax_rows";
    case Activation::renorm_rows: return "renorm_rows";
  }
  throw ContractError("unknown activation");
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "softmax_rows") return Activation::softmax_rows;
  if (name == "renorm_rows") return Activation::renorm_rows;
  throw ParameterError("unknown activation '" + name + "'");
}

Matrixd mlp_forward(const MlpParams& params, const Matrixd& input, MlpCache* cache) {
  if (input.cols() != params.in_dim()) {
    throw ContractError("input width " + std::to_string(input.cols()) +
                        " does not match layer in_dim " + std::to_string(params.in_dim()));
  }
  Matrixd pre = input * params.weight.transpose();
  pre.rowwise() += params.bias.transpose();
  Matrixd out;
  apply_activation(params.act, pre, out);
  if (cache != nullptr) {
    cache->input = input;
    cache->pre = std::move(pre);
    cache->output = out;
    cache->revision = params.revision;
  }
  return out;
}

MlpBackwardResult mlp_backward(const MlpParams& params, const MlpCache& cache,
                               const Matrixd& upstream_grad) {
  if (cache.revision != params.revision) {
    throw ContractError("stale cache: parameters were updated after the forward pass");
  }
  if (cache.input.cols() != params.in_dim() || upstream_grad.rows() != cache.input.rows() ||
      upstream_grad.cols() != params.out_dim()) {
    throw ContractError("gradient shape does not match cached forward pass");
  }
  const Matrixd dz = activation_backward(params.act, cache, upstream_grad);
  MlpBackwardResult result;
  result.grads.weight = dz.transpose() * cache.input;
  result.grads.bias = dz.colwise().sum().transpose();
  result.input_grad = dz * params.weight;
  return result;
}

MlpParams make_identity_averaging(Index dim, Activation act) {
  MlpParams p;
  p.weight = Matrixd::Zero(dim, 2 * dim);
  p.weight.leftCols(dim) = Matrixd::Identity(dim, dim) * 0.5;
  p.weight.rightCols(dim) = Matrixd::Identity(dim, dim) * 0.5;
  p.bias = Vectord::Zero(dim);
  p.act = act;
  return p;
}

MlpParams make_random_mlp(Index in_dim, Index out_dim, Activation act, Rng& rng,
                          double weight_scale, double bias_scale) {
  MlpParams p;
  p.weight.resize(out_dim, in_dim);
  for (Index i = 0; i < out_dim; ++i) {
    for (Index j = 0; j < in_dim; ++j) p.weight(i, j) = rng.normal(0.0, weight_scale);
  }
  p.bias.resize(out_dim);
  for (Index i = 0; i < out_dim; ++i) {
    p.bias[i] = bias_scale == 0.0 ? 0.0 : rng.normal(0.0, bias_scale);
  }
  p.act = act;
  return p;
}

double poly_lr(const OptimizerState& opt) {
  if (opt.total_iter <= 0) throw ParameterError("total_iter must be positive");
  if (opt.iter < 0 || opt.iter > opt.total_iter) {
    throw ContractError("iteration counter outside [0, total_iter]");
  }
  const double frac = static_cast<double>(opt.iter) / static_cast<double>(opt.total_iter);
  return opt.base_lr * std::pow(1.0 - frac, 0.9);
}

void sgd_step(OptimizerState& opt, const std::vector<MlpParams*>& params,
              const std::vector<const MlpGrads*>& grads, std::vector<MlpGrads>& velocity) {
  if (params.size() != grads.size()) throw ContractError("parameter/gradient count mismatch");
  if (opt.iter >= opt.total_iter) throw ContractError("optimizer already at total_iter");
  if (velocity.empty()) {
    velocity.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      velocity[p].weight = Matrixd::Zero(params[p]->weight.rows(), params[p]->weight.cols());
      velocity[p].bias = Vectord::Zero(params[p]->bias.size());
    }
  }
  if (velocity.size() != params.size()) throw ContractError("velocity buffers mismatched");

  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!grads[p]->weight.allFinite() || !grads[p]->bias.allFinite()) {
      throw DivergenceError("non-finite gradient in parameter group " + std::to_string(p));
    }
  }

  const double lr = poly_lr(opt);
  for (std::size_t p = 0; p < params.size(); ++p) {
    velocity[p].weight = opt.momentum * velocity[p].weight + grads[p]->weight;
    velocity[p].bias = opt.momentum * velocity[p].bias + grads[p]->bias;
    params[p]->weight -= lr * velocity[p].weight;
    params[p]->bias -= lr * velocity[p].bias;
    ++params[p]->revision;
  }
  ++opt.iter;
}

void teacher_update(const std::vector<MlpParams*>& teacher,
                    const std::vector<const MlpParams*>& student, double decay) {
  if (teacher.size() != student.size()) throw ContractError("teacher/student group size mismatch");
  for (std::size_t p = 0; p < teacher.size(); ++p) {
    if (teacher[p]->weight.rows() != student[p]->weight.rows() ||
        teacher[p]->weight.cols() != student[p]->weight.cols() ||
        teacher[p]->bias.size() != student[p]->bias.size()) {
      throw ContractError("teacher/student shape mismatch in group " + std::to_string(p));
    }
    teacher[p]->weight = decay * teacher[p]->weight + (1.0 - decay) * student[p]->weight;
    teacher[p]->bias = decay * teacher[p]->bias + (1.0 - decay) * student[p]->bias;
    ++teacher[p]->revision;
  }
}

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<std::pair<std::string, const MlpParams*>>& params,
                     Index step) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["step"] = step;
  manifest["params"] = nlohmann::json::array();
  for (const auto& [name, p] : params) {
    npy::save(p->weight, dir / (name + ".weight.npy"));
    npy::save(p->bias, dir / (name + ".bias.npy"));
    manifest["params"].push_back({{"name", name},
                                  {"out_dim", p->out_dim()},
                                  {"in_dim", p->in_dim()},
                                  {"activation", to_string(p->act)}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

Index load_checkpoint(const std::filesystem::path& dir, const NamedParams& params) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);

  for (const auto& [name, p] : params) {
    const Matrixd weight = npy::load_matrix(dir / (name + ".weight.npy"));
    const Matrixd bias = npy::load_matrix(dir / (name + ".bias.npy"));
    if (weight.rows() != p->weight.rows() || weight.cols() != p->weight.cols() ||
        bias.rows() != p->bias.size()) {
      throw ContractError("checkpoint shape mismatch for '" + name + "'");
    }
    p->weight = weight;
    p->bias = bias.col(0);
    ++p->revision;
  }
  return manifest.at("step").get<Index>();
}

}  // namespace mllc
