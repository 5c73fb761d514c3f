#include "gustpost/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace gustpost {

using nlohmann::json;

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

Eigen::ArrayXXd activate(const Eigen::ArrayXXd& z, Activation a) {
  switch (a) {
    case Activation::softplus:
      return z.unaryExpr([](double v) { return softplus(v); });
    case Activation::tanh_act:
      return z.tanh();
    case Activation::relu:
      return z.max(0.0);
  }
  throw std::logic_error("unknown activation");
}

// Derivative as a function of the pre-activation z.
Eigen::ArrayXXd activate_grad(const Eigen::ArrayXXd& z, Activation a) {
  switch (a) {
    case Activation::softplus:
      return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::tanh_act:
      return 1.0 - z.tanh().square();
    case Activation::relu:
      return (z > 0.0).cast<double>();
  }
  throw std::logic_error("unknown activation");
}

int output_dim(const NetworkConfig& cfg) {
  return cfg.head == Head::drn ? 2 : cfg.bernstein_degree + 1;
}

std::vector<double> effective_tau_grid(const NetworkConfig& cfg) {
  return cfg.tau_grid.empty() ? default_tau_grid() : cfg.tau_grid;
}

// Bernstein basis values B_{j,d}(tau) for every (j, tau) pair, cached once
// per loss evaluation.
Eigen::MatrixXd bernstein_basis(int degree, const std::vector<double>& taus) {
  const int d = degree;
  Eigen::MatrixXd basis(d + 1, static_cast<Eigen::Index>(taus.size()));
  std::vector<double> logc(static_cast<std::size_t>(d) + 1, 0.0);
  for (int j = 1; j <= d; ++j)
    logc[static_cast<std::size_t>(j)] = logc[static_cast<std::size_t>(j) - 1] +
                                        std::log(static_cast<double>(d - j + 1)) -
                                        std::log(static_cast<double>(j));
  for (std::size_t t = 0; t < taus.size(); ++t) {
    const double tau = taus[t];
    for (int j = 0; j <= d; ++j) {
      double v;
      if (tau <= 0.0)
        v = (j == 0) ? 1.0 : 0.0;
      else if (tau >= 1.0)
        v = (j == d) ? 1.0 : 0.0;
      else
        v = std::exp(logc[static_cast<std::size_t>(j)] + j * std::log(tau) +
                     (d - j) * std::log1p(-tau));
      basis(j, static_cast<Eigen::Index>(t)) = v;
    }
  }
  return basis;
}

// Per-sample loss and gradient wrt the raw head outputs.
// DRN: CRPS of a logistic with location out(0), scale softplus(out(1)),
// truncated at zero in per-lead mode, untruncated in joint (bias) mode.
// BQN: mean pinball loss over the tau grid, coefficients alpha_0 = out(0),
// alpha_j = alpha_{j-1} + softplus(out(j)).
double head_loss_grad(const NetworkConfig& cfg, const Eigen::VectorXd& out,
                      double y, const Eigen::MatrixXd* basis,
                      const std::vector<double>& taus, Eigen::VectorXd* grad) {
  if (cfg.head == Head::drn) {
    const double loc = out(0);
    const double raw = out(1);
    const double scale = softplus(raw);
    const double lb =
        cfg.mode == TrainMode::joint ? -std::numeric_limits<double>::infinity() : 0.0;
    TruncatedLogistic d;
    d.location = loc;
    d.scale = std::max(scale, 1e-12);
    d.lower_bound = lb;
    double dloc = 0.0, dscale = 0.0;
    crps_tlogis_grad(d, y, &dloc, &dscale);
    if (grad) {
      (*grad)(0) = dloc;
      (*grad)(1) = dscale * sigmoid(raw);
    }
    return crps_tlogis(d, y);
  }
  // BQN
  const int d = cfg.bernstein_degree;
  Eigen::VectorXd alpha(d + 1);
  alpha(0) = out(0);
  for (int j = 1; j <= d; ++j) alpha(j) = alpha(j - 1) + softplus(out(j));
  // Q(tau_t) for every grid level, then pinball residuals.
  Eigen::VectorXd q = basis->transpose() * alpha;
  double loss = 0.0;
  Eigen::VectorXd dalpha =Eigen::VectorXd::Zero(d + 1);
  const double invn = 1.0 / static_cast<double>(taus.size());
  for (std::size_t t = 0; t < taus.size(); ++t) {
    const double tau = taus[t];
    const double u = y - q(static_cast<Eigen::Index>(t));
    const double ind = u < 0.0 ? 1.0 : 0.0;
    loss += u * (tau - ind);
    if (grad) dalpha -= (tau - ind) * invn * basis->col(static_cast<Eigen::Index>(t));
  }
  loss *= invn;
  if (grad) {
    // d alpha_j / d out_0 = 1 for all j; d alpha_j / d out_k = sigmoid(out_k)
    // for 1 <= k <= j. Accumulate via suffix sums of dalpha.
    double suffix = 0.0;
    for (int j = d; j >= 1; --j) {
      suffix += dalpha(j);
      (*grad)(j) = suffix * sigmoid(out(j));
    }
    (*grad)(0) = suffix + dalpha(0);
  }
  return loss;
}

struct AdamState {
  std::vector<double> m, v;
  int t = 0;
};

}  // namespace

TrainedNetwork init_network(const Dataset& ds, const NetworkConfig& cfg,
                            const std::vector<std::size_t>& recipe_fit_indices) {
  if (cfg.embedding_dim < 1) throw std::invalid_argument("embedding_dim must be >= 1");
  if (cfg.bernstein_degree < 1 && cfg.head == Head::bqn)
    throw std::invalid_argument("bernstein_degree must be >= 1");
  for (int h : cfg.hidden)
    if (h < 1) throw std::invalid_argument("hidden layer widths must be >= 1");

  TrainedNetwork net;
  net.cfg = cfg;
  net.cfg.tau_grid = effective_tau_grid(cfg);
  net.recipe.use_persistence = cfg.use_persistence;
  net.recipe.use_era_flags = cfg.use_era_flags;
  net.recipe.joint_mode = cfg.mode == TrainMode::joint;
  net.recipe.extra_predictor_names = cfg.extra_predictors;
  net.recipe.target_mode = cfg.mode == TrainMode::joint
                               ? TargetMode::ensemble_mean_bias
                               : TargetMode::raw_gust;
  fit_recipe(net.recipe, ds, recipe_fit_indices);

  const int n_stations = static_cast<int>(ds.manifest().stations.size());
  const int in_dim = static_cast<int>(net.recipe.dim()) + cfg.embedding_dim;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto glorot = [&](int rows, int cols) {
    Eigen::MatrixXd w(rows, cols);
    const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = s * gauss(rng);
    return w;
  };

  std::vector<int> dims = {in_dim};
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(output_dim(cfg));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    net.weights.push_back(glorot(dims[l + 1], dims[l]));
    net.biases.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
  }
  net.embeddings = Eigen::MatrixXd(cfg.embedding_dim, n_stations);
  for (int j = 0; j < n_stations; ++j)
    for (int i = 0; i < cfg.embedding_dim; ++i)
      net.embeddings(i, j) = 0.1 * gauss(rng);
  return net;
}

void prepare_batch(const Dataset& ds, const std::vector<std::size_t>& rows,
                   const TrainedNetwork& net, Eigen::MatrixXd* X,
                   std::vector<int>* emb_idx, std::vector<double>* targets) {
  const auto f = static_cast<Eigen::Index>(net.recipe.dim());
  X->resize(f, static_cast<Eigen::Index>(rows.size()));
  emb_idx->clear();
  targets->clear();
  emb_idx->reserve(rows.size());
  targets->reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& c = ds[rows[k]];
    const auto x = build_features(c, ds, net.recipe);
    for (Eigen::Index j = 0; j < f; ++j)
      (*X)(j, static_cast<Eigen::Index>(k)) = x[static_cast<std::size_t>(j)];
    emb_idx->push_back(embedding_index(c, ds));
    targets->push_back(build_target(c, net.recipe));
  }
}

double network_batch_loss(const TrainedNetwork& net, const Eigen::MatrixXd& X,
                          const std::vector<int>& emb_idx,
                          const std::vector<double>& targets,
                          std::vector<double>* flat_grad) {
  const auto n = static_cast<Eigen::Index>(emb_idx.size());
  if (X.cols() != n || targets.size() != emb_idx.size())
    throw std::invalid_argument("batch size mismatch");
  if (n == 0) throw std::invalid_argument("empty batch");
  const auto& cfg = net.cfg;
  const int e = cfg.embedding_dim;
  const Eigen::Index f = X.rows();

  // Forward: stack standardized features with the station embedding.
  Eigen::MatrixXd a0(f + e, n);
  a0.topRows(f) = X;
  for (Eigen::Index k = 0; k < n; ++k)
    a0.bottomRows(e).col(k) = net.embeddings.col(emb_idx[static_cast<std::size_t>(k)]);

  const std::size_t nl = net.weights.size();
  std::vector<Eigen::MatrixXd> acts(nl + 1);
  std::vector<Eigen::MatrixXd> pre(nl);
  acts[0] = std::move(a0);
  for (std::size_t l = 0; l < nl; ++l) {
    pre[l] = (net.weights[l] * acts[l]).colwise() + net.biases[l];
    acts[l + 1] = (l + 1 == nl)
                      ? pre[l]
                      : Eigen::MatrixXd(activate(pre[l].array(), cfg.activation));
  }

  const Eigen::MatrixXd& out = acts[nl];
  const auto taus = effective_tau_grid(cfg);
  Eigen::MatrixXd basis;
  if (cfg.head == Head::bqn) basis = bernstein_basis(cfg.bernstein_degree, taus);

  double total = 0.0;
  Eigen::MatrixXd dout(out.rows(), n);
  Eigen::VectorXd g(out.rows());
  for (Eigen::Index k = 0; k < n; ++k) {
    const double loss = head_loss_grad(cfg, out.col(k), targets[static_cast<std::size_t>(k)],
                                       cfg.head == Head::bqn ? &basis : nullptr, taus,
                                       flat_grad ? &g : nullptr);
    if (!std::isfinite(loss))
      throw std::runtime_error("non-finite loss in batch at sample " +
                               std::to_string(k));
    total += loss;
    if (flat_grad) dout.col(k) = g;
  }
  const double mean_loss = total / static_cast<double>(n);
  if (!flat_grad) return mean_loss;

  // Backward. Gradient of the *mean* loss.
  dout /= static_cast<double>(n);
  std::vector<Eigen::MatrixXd> dW(nl);
  std::vector<Eigen::VectorXd> db(nl);
  Eigen::MatrixXd delta = dout;
  for (std::size_t l = nl; l-- > 0;) {
    if (l + 1 != nl)
      delta = delta.array() * activate_grad(pre[l].array(), cfg.activation);
    dW[l] = delta * acts[l].transpose();
    db[l] = delta.rowwise().sum();
    if (l > 0) delta = (net.weights[l].transpose() * delta).eval();
  }
  Eigen::MatrixXd din = net.weights[0].transpose() * delta;
  Eigen::MatrixXd demb = Eigen::MatrixXd::Zero(e, net.embeddings.cols());
  for (Eigen::Index k = 0; k < n; ++k)
    demb.col(emb_idx[static_cast<std::size_t>(k)]) += din.bottomRows(e).col(k);

  // Flatten in the same order as flatten_parameters.
  flat_grad->clear();
  flat_grad->reserve(static_cast<std::size_t>(demb.size()));
  for (Eigen::Index j = 0; j < demb.cols(); ++j)
    for (Eigen::Index i = 0; i < demb.rows(); ++i) flat_grad->push_back(demb(i, j));
  for (std::size_t l = 0; l < nl; ++l) {
    for (Eigen::Index j = 0; j < dW[l].cols(); ++j)
      for (Eigen::Index i = 0; i < dW[l].rows(); ++i) flat_grad->push_back(dW[l](i, j));
    for (Eigen::Index i = 0; i < db[l].size(); ++i) flat_grad->push_back(db[l](i));
  }
  return mean_loss;
}

std::vector<double> flatten_parameters(const TrainedNetwork& net) {
  std::vector<double> flat;
  for (Eigen::Index j = 0; j < net.embeddings.cols(); ++j)
    for (Eigen::Index i = 0; i < net.embeddings.rows(); ++i)
      flat.push_back(net.embeddings(i, j));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) flat.push_back(w(i, j));
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i)
      flat.push_back(net.biases[l](i));
  }
  return flat;
}

void set_parameters(TrainedNetwork& net, const std::vector<double>& flat) {
  std::size_t pos = 0;
  auto take = [&](double* dst, std::size_t count) {
    if (pos + count > flat.size())
      throw std::invalid_argument("flat parameter vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + count), dst);
    pos += count;
  };
  take(net.embeddings.data(), static_cast<std::size_t>(net.embeddings.size()));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    take(net.weights[l].data(), static_cast<std::size_t>(net.weights[l].size()));
    take(net.biases[l].data(), static_cast<std::size_t>(net.biases[l].size()));
  }
  if (pos != flat.size())
    throw std::invalid_argument("flat parameter vector too long");
}

namespace {

TrainedNetwork train_impl(const Dataset& ds, const std::vector<std::size_t>& train_idx,
                          const std::vector<std::size_t>& val_idx,
                          const NetworkConfig& cfg) {
  // Only observed rows can contribute to the loss.
  std::vector<std::size_t> tr, va;
  for (auto i : train_idx)
    if (ds[i].observation) tr.push_back(i);
  for (auto i : val_idx)
    if (ds[i].observation) va.push_back(i);
  if (tr.size() < 2) throw std::invalid_argument("too few observed training cases");
  if (va.empty()) throw std::invalid_argument("empty validation set");

  TrainedNetwork net = init_network(ds, cfg, tr);

  Eigen::MatrixXd Xtr, Xva;
  std::vector<int> etr, eva;
  std::vector<double> ytr, yva;
  prepare_batch(ds, tr, net, &Xtr, &etr, &ytr);
  prepare_batch(ds, va, net, &Xva, &eva, &yva);

  std::vector<double> params = flatten_parameters(net);
  AdamState adam;
  adam.m.assign(params.size(), 0.0);
  adam.v.assign(params.size(), 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t bs = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), tr.size()));

  std::vector<double> best_params = params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_best = 0;
  std::vector<double> grad;
  Eigen::MatrixXd Xb;
  std::vector<int> eb;
  std::vector<double> yb;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_n = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(start + bs, order.size());
      const auto nb = static_cast<Eigen::Index>(stop - start);
      Xb.resize(Xtr.rows(), nb);
      eb.resize(static_cast<std::size_t>(nb));
      yb.resize(static_cast<std::size_t>(nb));
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t src = order[k];
        Xb.col(static_cast<Eigen::Index>(k - start)) =
            Xtr.col(static_cast<Eigen::Index>(src));
        eb[k - start] = etr[src];
        yb[k - start] = ytr[src];
      }
      double batch_loss;
      try {
        batch_loss = network_batch_loss(net, Xb, eb, yb, &grad);
      } catch (const std::runtime_error& ex) {
        throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(start / bs) + ": " +
                                 ex.what());
      }
      epoch_loss += batch_loss * static_cast<double>(nb);
      epoch_n += static_cast<std::size_t>(nb);

      ++adam.t;
      const double corr1 = 1.0 - std::pow(b1, adam.t);
      const double corr2 = 1.0 - std::pow(b2, adam.t);
      for (std::size_t p = 0; p < params.size(); ++p) {
        adam.m[p] = b1 * adam.m[p] + (1.0 - b1) * grad[p];
        adam.v[p] = b2 * adam.v[p] + (1.0 - b2) * grad[p] * grad[p];
        params[p] -= cfg.learning_rate * (adam.m[p] / corr1) /
                     (std::sqrt(adam.v[p] / corr2) + eps);
      }
      set_parameters(net, params);
    }

    const double val_loss = network_batch_loss(net, Xva, eva, yva, nullptr);
    net.log.push_back({epoch_loss / static_cast<double>(epoch_n), val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      best_params = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  set_parameters(net, best_params);
  net.best_val_loss = best_val;
  net.best_epoch = best_epoch;
  return net;
}

}  // namespace

TrainedNetwork train_network(const Dataset& ds,
                             const std::vector<std::size_t>& train_idx,
                             const std::vector<std::size_t>& val_idx,
                             const NetworkConfig& cfg) {
  return train_impl(ds, train_idx, val_idx, cfg);
}

TrainedNetwork train_network(const Dataset& ds,
                             const std::vector<std::size_t>& indices,
                             const NetworkConfig& cfg) {
  const Split sp = split_indices(indices, 0.2, cfg.seed);
  return train_impl(ds, sp.train, sp.validation, cfg);
}

TrainedNetwork train_joint(const Dataset& ds, const std::vector<std::size_t>& indices,
                           const NetworkConfig& cfg) {
  NetworkConfig jc = cfg;
  jc.mode = TrainMode::joint;
  return train_network(ds, indices, jc);
}

std::vector<TrainedNetwork> train_network_ensemble(
    const Dataset& ds, const std::vector<std::size_t>& indices,
    const NetworkConfig& cfg, int n_seeds) {
  if (n_seeds < 1) throw std::invalid_argument("n_seeds must be >= 1");
  std::vector<TrainedNetwork> nets;
  nets.reserve(static_cast<std::size_t>(n_seeds));
  for (int s = 0; s < n_seeds; ++s) {
    NetworkConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(s);
    nets.push_back(train_network(ds, indices, c));
  }
  return nets;
}

Eigen::VectorXd TrainedNetwork::raw_outputs(const ForecastCase& c,
                                            const Dataset& ds) const {
  const auto x = build_features(c, ds, recipe);
  const int idx = embedding_index(c, ds);
  Eigen::VectorXd a(static_cast<Eigen::Index>(x.size()) + cfg.embedding_dim);
  for (std::size_t j = 0; j < x.size(); ++j)
    a(static_cast<Eigen::Index>(j)) = x[j];
  a.tail(cfg.embedding_dim) = embeddings.col(idx);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::VectorXd z = weights[l] * a + biases[l];
    a = (l + 1 == weights.size())
            ? z
            : Eigen::VectorXd(activate(z.array(), cfg.activation).matrix());
  }
  return a;
}

PredictiveDistribution TrainedNetwork::predict(const ForecastCase& c,
                                               const Dataset& ds) const {
  const Eigen::VectorXd out = raw_outputs(c, ds);
  if (cfg.head == Head::drn) {
    const double loc = out(0);
    const double scale = std::max(softplus(out(1)), 1e-12);
    if (cfg.mode == TrainMode::joint) {
      BiasShiftedLogistic d;
      d.ensemble_mean = c.ensemble_mean();
      d.location = loc * recipe.target_sd + recipe.target_mean;
      d.scale = scale * recipe.target_sd;
      return d;
    }
    return TruncatedLogistic(loc, scale, 0.0);
  }
  const int deg = cfg.bernstein_degree;
  std::vector<double> alpha(static_cast<std::size_t>(deg) + 1);
  alpha[0] = out(0);
  for (int j = 1; j <= deg; ++j)
    alpha[static_cast<std::size_t>(j)] =
        alpha[static_cast<std::size_t>(j) - 1] + softplus(out(j));
  if (cfg.mode == TrainMode::joint) {
    const double shift = recipe.target_mean + c.ensemble_mean();
    for (auto& v : alpha) v = v * recipe.target_sd + shift;
  }
  return BernsteinQuantile(std::move(alpha));
}

PredictiveDistribution predict_aggregate(const std::vector<TrainedNetwork>& nets,
                                         const ForecastCase& c, const Dataset& ds) {
  if (nets.empty()) throw std::invalid_argument("empty network ensemble");
  if (nets.size() == 1) return nets[0].predict(c, ds);
  const Head head = nets[0].cfg.head;
  if (head == Head::drn) {
    // Parameters live on different scales across variants, so aggregate on
    // the observation scale via the first member's variant type.
    double loc = 0.0, scale = 0.0, bias_loc = 0.0;
    const bool joint = nets[0].cfg.mode == TrainMode::joint;
    for (const auto& n : nets) {
      const auto d = n.predict(c, ds);
      if (joint) {
        const auto& b = std::get<BiasShiftedLogistic>(d);
        bias_loc += b.location;
        scale += b.scale;
      } else {
        const auto& t = std::get<TruncatedLogistic>(d);
        loc += t.location;
        scale += t.scale;
      }
    }
    const double k = static_cast<double>(nets.size());
    if (joint) {
      BiasShiftedLogistic b;
      b.ensemble_mean = c.ensemble_mean();
      b.location = bias_loc / k;
      b.scale = scale / k;
      return b;
    }
    return TruncatedLogistic(loc / k, scale / k, 0.0);
  }
  std::vector<double> alpha;
  for (const auto& n : nets) {
    const auto d = n.predict(c, ds);
    const auto& b = std::get<BernsteinQuantile>(d);
    if (alpha.empty())
      alpha = b.coefficients;
    else {
      if (alpha.size() != b.coefficients.size())
        throw std::invalid_argument("mixed Bernstein degrees in ensemble");
      for (std::size_t j = 0; j < alpha.size(); ++j) alpha[j] += b.coefficients[j];
    }
  }
  for (auto& v : alpha) v /= static_cast<double>(nets.size());
  return BernsteinQuantile(std::move(alpha));
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto r = j.size();
  if (r == 0) return Eigen::MatrixXd(0, 0);
  const auto c = j.at(0).size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < r; ++i) {
    if (j.at(i).size() != c) throw std::runtime_error("ragged weight matrix");
    for (std::size_t k = 0; k < c; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          j.at(i).at(k).get<double>();
  }
  return m;
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::tanh_act: return "tanh";
    case Activation::relu: return "relu";
  }
  return "softplus";
}

Activation activation_from(const std::string& s) {
  if (s == "softplus") return Activation::softplus;
  if (s == "tanh") return Activation::tanh_act;
  if (s == "relu") return Activation::relu;
  throw std::runtime_error("unknown activation: " + s);
}

}  // namespace

void TrainedNetwork::save(const std::string& path) const {
  json j;
  j["format"] = "network";
  j["version"] = 1;
  json c;
  c["hidden"] = cfg.hidden;
  c["embedding_dim"] = cfg.embedding_dim;
  c["activation"] = activation_name(cfg.activation);
  c["learning_rate"] = cfg.learning_rate;
  c["batch_size"] = cfg.batch_size;
  c["max_epochs"] = cfg.max_epochs;
  c["patience"] = cfg.patience;
  c["seed"] = cfg.seed;
  c["head"] = cfg.head == Head::drn ? "drn" : "bqn";
  c["mode"] = cfg.mode == TrainMode::joint ? "joint" : "per_lead";
  c["bernstein_degree"] = cfg.bernstein_degree;
  c["tau_grid"] = cfg.tau_grid;
  c["use_persistence"] = cfg.use_persistence;
  c["use_era_flags"] = cfg.use_era_flags;
  c["extra_predictors"] = cfg.extra_predictors;
  j["config"] = std::move(c);

  json r;
  r["use_persistence"] = recipe.use_persistence;
  r["use_era_flags"] = recipe.use_era_flags;
  r["joint_mode"] = recipe.joint_mode;
  r["extra_predictors"] = recipe.extra_predictor_names;
  r["target_mode"] = recipe.target_mode == TargetMode::raw_gust
                         ? "raw_gust"
                         : "ensemble_mean_bias";
  r["fitted"] = recipe.fitted;
  r["feature_names"] = recipe.feature_names;
  r["mean"] = recipe.mean;
  r["sd"] = recipe.sd;
  r["dropped"] = recipe.dropped_features;
  r["target_mean"] = recipe.target_mean;
  r["target_sd"] = recipe.target_sd;
  j["recipe"] = std::move(r);

  json shapes = json::array();
  json wj = json::array();
  json bj = json::array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    shapes.push_back({weights[l].rows(), weights[l].cols()});
    wj.push_back(matrix_to_json(weights[l]));
    json b = json::array();
    for (Eigen::Index i = 0; i < biases[l].size(); ++i) b.push_back(biases[l](i));
    bj.push_back(std::move(b));
  }
  j["shapes"] = std::move(shapes);
  j["weights"] = std::move(wj);
  j["biases"] = std::move(bj);
  j["embeddings"] = matrix_to_json(embeddings);
  j["best_val_loss"] = best_val_loss;
  j["best_epoch"] = best_epoch;
  json lg = json::array();
  for (const auto& el : log) lg.push_back({el.train_loss, el.val_loss});
  j["log"] = std::move(lg);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write network: " + path);
  out << j.dump() << "\n";
}

TrainedNetwork TrainedNetwork::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read network: " + path);
  json j;
  in >> j;
  if (j.at("format").get<std::string>() != "network")
    throw std::runtime_error("not a network file: " + path);

  TrainedNetwork net;
  const json& c = j.at("config");
  net.cfg.hidden = c.at("hidden").get<std::vector<int>>();
  net.cfg.embedding_dim = c.at("embedding_dim").get<int>();
  net.cfg.activation = activation_from(c.at("activation").get<std::string>());
  net.cfg.learning_rate = c.at("learning_rate").get<double>();
  net.cfg.batch_size = c.at("batch_size").get<int>();
  net.cfg.max_epochs = c.at("max_epochs").get<int>();
  net.cfg.patience = c.at("patience").get<int>();
  net.cfg.seed = c.at("seed").get<std::uint64_t>();
  net.cfg.head = c.at("head").get<std::string>() == "drn" ? Head::drn : Head::bqn;
  net.cfg.mode = c.at("mode").get<std::string>() == "joint" ? TrainMode::joint
                                                            : TrainMode::per_lead;
  net.cfg.bernstein_degree = c.at("bernstein_degree").get<int>();
  net.cfg.tau_grid = c.at("tau_grid").get<std::vector<double>>();
  net.cfg.use_persistence = c.at("use_persistence").get<bool>();
  net.cfg.use_era_flags = c.at("use_era_flags").get<bool>();
  net.cfg.extra_predictors = c.at("extra_predictors").get<std::vector<std::string>>();

  const json& r = j.at("recipe");
  net.recipe.use_persistence = r.at("use_persistence").get<bool>();
  net.recipe.use_era_flags = r.at("use_era_flags").get<bool>();
  net.recipe.joint_mode = r.at("joint_mode").get<bool>();
  net.recipe.extra_predictor_names =
      r.at("extra_predictors").get<std::vector<std::string>>();
  net.recipe.target_mode = r.at("target_mode").get<std::string>() == "raw_gust"
                               ? TargetMode::raw_gust
                               : TargetMode::ensemble_mean_bias;
  net.recipe.fitted = r.at("fitted").get<bool>();
  net.recipe.feature_names = r.at("feature_names").get<std::vector<std::string>>();
  net.recipe.mean = r.at("mean").get<std::vector<double>>();
  net.recipe.sd = r.at("sd").get<std::vector<double>>();
  net.recipe.dropped_features = r.at("dropped").get<std::vector<std::string>>();
  net.recipe.target_mean = r.at("target_mean").get<double>();
  net.recipe.target_sd = r.at("target_sd").get<double>();

  const json& shapes = j.at("shapes");
  const json& wj = j.at("weights");
  const json& bj = j.at("biases");
  if (wj.size() != bj.size() || wj.size() != shapes.size())
    throw std::runtime_error("inconsistent layer counts in " + path);
  for (std::size_t l = 0; l < wj.size(); ++l) {
    Eigen::MatrixXd w = matrix_from_json(wj.at(l));
    if (w.rows() != shapes.at(l).at(0).get<Eigen::Index>() ||
        w.cols() != shapes.at(l).at(1).get<Eigen::Index>())
      throw std::runtime_error("weight shape mismatch in " + path);
    net.weights.push_back(std::move(w));
    const json& b = bj.at(l);
    Eigen::VectorXd bv(static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < b.size(); ++i)
      bv(static_cast<Eigen::Index>(i)) = b.at(i).get<double>();
    if (bv.size() != net.weights.back().rows())
      throw std::runtime_error("bias shape mismatch in " + path);
    net.biases.push_back(std::move(bv));
  }
  net.embeddings = matrix_from_json(j.at("embeddings"));
  net.best_val_loss = j.at("best_val_loss").get<double>();
  net.best_epoch = j.at("best_epoch").get<int>();
  for (const auto& el : j.at("log"))
    net.log.push_back({el.at(0).get<double>(), el.at(1).get<double>()});
  return net;
}

void TrainedNetwork::write_training_log_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  out << "epoch,train_loss,val_loss\n";
  char buf[128];
  for (std::size_t e = 0; e < log.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g\n", e, log[e].train_loss,
                  log[e].val_loss);
    out << buf;
  }
}

}  // namespace gustpost
