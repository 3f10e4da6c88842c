#pragma once

#include "obsmhe/harness.hpp"

#include <cstdint>
#include <string>

namespace obsmhe {

/// Estimator block of a config file. W is a * P2.
struct EstimatorSettings {
    int M = 1;
    int T = 1;
    double a = 1.0;
    Matrix G;
    EstimatorForm form = EstimatorForm::Filtering;
    CandidateMode candidate_mode = CandidateMode::Simple;
    int iterations = 0;  // or kConverged
    OptimizerOptions optimizer;
};

struct ScenarioSettings {
    Vector x0;
    Vector xhat0;
    int t_sim = 200;
    std::uint64_t seed = 0;
    int replicates = 1;
};

/// A parsed experiment file. Sections: model, observer, certificate,
/// estimator, scenario. All physical parameters are required.
struct ExperimentConfig {
    std::string model_id;
    ReactorParams reactor;  // model and observer parameters
    bool metric_projection = true;
    Matrix P;
    double eta = 0.0;
    Matrix Q;
    Matrix R;
    EstimatorSettings estimator;
    ScenarioSettings scenario;

    LyapunovCertificate certificate() const;
    SystemModel model() const;
    AuxObserver observer(const SystemModel& model) const;
    MheConfig mhe_config() const;
    /// Everything wired together, with the estimator and scenario blocks as given.
    Scenario build_scenario() const;
};

/// Parses strict JSON. Errors are ConfigError with "<origin>:<line>: ..." prefixes.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path);

}  // namespace obsmhe
