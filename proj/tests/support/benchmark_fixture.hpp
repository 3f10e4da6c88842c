#pragma once

// Reactor benchmark wiring shared by the tests. The numbers are typed in here
// rather than read from the bundled config so that the config loader is
// tested against them instead of being trusted by them.

#include "obsmhe/harness.hpp"

namespace fixture {

using namespace obsmhe;

inline Matrix benchmark_P() { return (Matrix(2, 2) << 1.537, 1.380, 1.380, 1.254).finished(); }

inline LyapunovCertificate benchmark_cert(double eta = 0.955) {
    return LyapunovCertificate::quadratic(benchmark_P(), eta, 1e3 * Matrix::Identity(2, 2),
                                          100.0 * Matrix::Identity(1, 1));
}

inline MheConfig benchmark_mhe(double a, int M, int iterations, CandidateMode mode = CandidateMode::Simple,
                               int T = 1) {
    MheConfig cfg;
    cfg.M = M;
    cfg.T = T;
    cfg.W = a * benchmark_P();
    cfg.G = Matrix::Identity(1, 1);
    cfg.lipschitz_h = 1.4142135623730951;
    cfg.form = EstimatorForm::Filtering;
    cfg.candidate_mode = mode;
    cfg.iterations = iterations;
    return cfg;
}

inline Scenario benchmark_scenario(double a, int M, int iterations, std::uint64_t seed = 0,
                                   CandidateMode mode = CandidateMode::Simple, int T = 1) {
    const ReactorParams rp;
    SystemModel model = make_reactor_model(rp);
    AuxObserver obs = make_reactor_observer(model, rp);
    Scenario sc{model,
                obs,
                benchmark_cert(),
                benchmark_mhe(a, M, iterations, mode, T),
                vec({3.0, 1.0}),
                vec({0.1, 4.5}),
                Box::symmetric(Vector::Constant(2, 2e-3)),
                Box::symmetric(Vector::Constant(1, 1e-2))};
    sc.t_sim = 200;
    sc.seed = seed;
    return sc;
}

}  // namespace fixture
