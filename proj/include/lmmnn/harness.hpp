#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmmnn/predictor.hpp"
#include "lmmnn/simgen.hpp"
#include "lmmnn/trainer.hpp"

namespace lmmnn {

inline const std::vector<std::string> kMethods{"lmmnn", "ignore", "ohe", "embeddings", "lmmnn-e"};

struct ExperimentConfig {
    std::optional<SimSpec> sim_spec;
    std::optional<std::string> dataset_path;
    std::vector<std::string> methods{"lmmnn", "ignore"};
    std::size_t replications = 5;
    NetConfig net_architecture;
    TrainConfig train_config;
    std::string output_directory = "lmmnn_out";
    std::size_t ohe_max_columns = 2000;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

struct CellResult {
    std::string method;
    std::size_t replication = 0;
    std::string metric;  // "mse" or "auc"
    double value = 0.0;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
    std::vector<std::string> theta_names;
    Vector theta;
    double wall_seconds = 0.0;
    std::string error;  // empty when the cell succeeded
    std::uint64_t split_digest = 0;  // hash of the train and test indices the cell saw
    TrainHistory history;
    nlohmann::json model;

    bool ok() const noexcept { return error.empty(); }
};

struct SummaryRow {
    std::string method;
    std::string metric;
    Aggregate stats;
    std::size_t failed = 0;
};

struct ExperimentReport {
    std::vector<std::string> methods;
    std::vector<CellResult> cells;  // replication-major, methods in config order

    std::vector<SummaryRow> summary() const;
    bool all_ok() const;
    const CellResult* find(const std::string& method, std::size_t replication) const;
};

struct MethodOptions {
    NetConfig net;
    TrainConfig train;
    std::size_t ohe_max_columns = 2000;
};

std::size_t embedding_dim(std::size_t q);  // min(100, ceil(q / 10))

// Network inputs of a baseline. enc = {"append_t": bool, "id_q": [q per id column]}.
// ohe: X then one indicator block per id column (unseen levels all zero);
// embeddings: id columns first, then X.
DenseMatrix baseline_inputs(const std::string& method, const MixedDataset& ds, const nlohmann::json& enc);

// Trains one method on the given split and scores it on the test rows.
// Throws on failure; run() turns failures into error strings.
CellResult run_method(const std::string& method, const MixedDataset& ds, std::span<const std::size_t> train,
                      std::span<const std::size_t> test, const MethodOptions& options);

ExperimentReport run(const ExperimentConfig& config);

// results.csv, summary.csv, theta.csv, timing.csv, history/, models/
void report_write(const ExperimentReport& report, const std::string& dir);
std::vector<SummaryRow> summarize_results_csv(const std::string& results_csv);

// Applies a saved model (models/*.json) to every row of a dataset.
Vector predict_saved(const nlohmann::json& model, const MixedDataset& ds);

}  // namespace lmmnn
