#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gustpost/distributions.hpp"
#include "gustpost/domain.hpp"
#include "gustpost/features.hpp"

namespace gustpost {

enum class Activation { softplus, tanh_act, relu };
enum class Head { drn, bqn };
enum class TrainMode { per_lead, joint };

struct NetworkConfig {
  std::vector<int> hidden = {64, 32};
  int embedding_dim = 10;
  Activation activation = Activation::softplus;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 1;
  Head head = Head::drn;
  TrainMode mode = TrainMode::per_lead;
  int bernstein_degree = 12;
  std::vector<double> tau_grid;  // empty = default 99-level grid

  bool use_persistence = false;
  bool use_era_flags = false;
  std::vector<std::string> extra_predictors;
};

struct EpochLog {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

class TrainedNetwork {
 public:
  NetworkConfig cfg;
  FeatureRecipe recipe;
  std::vector<Eigen::MatrixXd> weights;  // (out x in) per dense layer
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd embeddings;            // embedding_dim x n_stations
  std::vector<EpochLog> log;
  double best_val_loss = 0.0;
  int best_epoch = -1;

  PredictiveDistribution predict(const ForecastCase& c, const Dataset& ds) const;
  // Raw head outputs for one case (DRN: loc, raw scale; BQN: raw coefs).
  Eigen::VectorXd raw_outputs(const ForecastCase& c, const Dataset& ds) const;

  void save(const std::string& path) const;
  static TrainedNetwork load(const std::string& path);
  void write_training_log_csv(const std::string& path) const;
};

// Initializes an untrained network (seeded); exposed for gradient checks.
TrainedNetwork init_network(const Dataset& ds, const NetworkConfig& cfg,
                            const std::vector<std::size_t>& recipe_fit_indices);

// Mean loss over a prepared batch; optionally the gradient wrt every
// parameter in flatten_parameters order.
double network_batch_loss(const TrainedNetwork& net, const Eigen::MatrixXd& X,
                          const std::vector<int>& emb_idx,
                          const std::vector<double>& targets,
                          std::vector<double>* flat_grad = nullptr);

std::vector<double> flatten_parameters(const TrainedNetwork& net);
void set_parameters(TrainedNetwork& net, const std::vector<double>& flat);

// Builds the standardized feature matrix (features x N), embedding indices
// and model-scale targets for the given rows (observation required).
void prepare_batch(const Dataset& ds, const std::vector<std::size_t>& rows,
                   const TrainedNetwork& net, Eigen::MatrixXd* X,
                   std::vector<int>* emb_idx, std::vector<double>* targets);

TrainedNetwork train_network(const Dataset& ds,
                             const std::vector<std::size_t>& train_idx,
                             const std::vector<std::size_t>& val_idx,
                             const NetworkConfig& cfg);
// Splits 20% validation internally (seeded) before training.
TrainedNetwork train_network(const Dataset& ds,
                             const std::vector<std::size_t>& indices,
                             const NetworkConfig& cfg);
// Joint model over all lead times and runs: bias target, cyclic hour and
// lead time features, non-truncated logistic during estimation.
TrainedNetwork train_joint(const Dataset& ds,
                           const std::vector<std::size_t>& indices,
                           const NetworkConfig& cfg);

// Optional multi-seed aggregation: seeds cfg.seed .. cfg.seed + n - 1.
std::vector<TrainedNetwork> train_network_ensemble(
    const Dataset& ds, const std::vector<std::size_t>& indices,
    const NetworkConfig& cfg, int n_seeds);
// DRN: mean location/scale; BQN: mean coefficients.
PredictiveDistribution predict_aggregate(const std::vector<TrainedNetwork>& nets,
                                         const ForecastCase& c, const Dataset& ds);

}  // namespace gustpost
