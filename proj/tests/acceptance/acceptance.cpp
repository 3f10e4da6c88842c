// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails.

#include "benchmark_fixture.hpp"
#include "obsmhe/cli.hpp"
#include "obsmhe/harness.hpp"
#include "obsmhe/lyapcert.hpp"
#include "obsmhe/mhe.hpp"
#include "obsmhe/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace obsmhe;

namespace {

const Vector kNoInput(0);
constexpr int kSeeds = 20;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double budget_seconds, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("criterion %2d %s: %s (%s; %.3f s of %.0f s)\n", id, pass ? "PASS" : "FAIL", title,
                o.detail.c_str(), secs, budget_seconds);
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

GammaParams benchmark_params(double a) {
    return GammaParams::from(fixture::benchmark_cert(), a * fixture::benchmark_P());
}

struct SweepConfig {
    double a;
    int M;
    CandidateMode mode;
    int T;
};

const SweepConfig kSweep[] = {
    {1e2, 16, CandidateMode::Simple, 1},
    {1e-3, 128, CandidateMode::Simple, 1},
    {1e-3, 3, CandidateMode::Reinit, 178},
};

Scenario sweep_scenario(const SweepConfig& c, int iterations, std::uint64_t seed) {
    return fixture::benchmark_scenario(c.a, c.M, iterations, seed, c.mode, c.T);
}

double mean_sse(double a, int M, int iterations) {
    return run_batch(fixture::benchmark_scenario(a, M, iterations, 0), kSeeds).mean_sse;
}

}  // namespace

int main() {
    criterion(1, "minimal horizon for the benchmark", 1.0, [] {
        const int hi = min_horizon(benchmark_params(1e2), EstimatorForm::Filtering).value;
        const int lo = min_horizon(benchmark_params(1e-3), EstimatorForm::Filtering).value;
        return Outcome{hi == 16 && lo == 128,
                       "a=1e2 -> " + std::to_string(hi) + ", a=1e-3 -> " + std::to_string(lo) + "; want 16, 128"};
    });

    criterion(2, "minimal restart depth for M=3", 1.0, [] {
        const int T = min_T(benchmark_params(1e-3), 3, EstimatorForm::Filtering).value;
        return Outcome{T == 178, "T=" + std::to_string(T) + "; want 178"};
    });

    criterion(3, "dissipation sampling", 30.0, [] {
        const SystemModel model = make_reactor_model();
        const AuxObserver obs = make_reactor_observer(model);
        const DissipationReport nominal =
            check_dissipation(fixture::benchmark_cert(), model, obs, 100000, 0, 1e-9);
        const DissipationReport shrunk =
            check_dissipation(fixture::benchmark_cert(0.5), model, obs, 100000, 0, 1e-9);
        return Outcome{nominal.violations == 0 && shrunk.violations > 0,
                       "eta=0.955: " + std::to_string(nominal.violations) + " violations (worst margin " +
                           fmt("%.3g", nominal.worst_margin) + "), eta=0.5: " +
                           std::to_string(shrunk.violations) + " violations; want 0 and >0"};
    });

    criterion(4, "offline inequality sweeps", 600.0, [] {
        std::size_t runs = 0, th = 0, lem = 0, cd = 0;
        for (const SweepConfig& c : kSweep) {
            for (int it : {0, 1, 5}) {
                const BatchSummary s = run_batch(sweep_scenario(c, it, 0), kSeeds);
                runs += static_cast<std::size_t>(s.replicates);
                th += s.theorem1_violations;
                lem += s.lemma1_violations;
                cd += s.cost_decrease_violations;
            }
        }
        return Outcome{th == 0 && lem == 0 && cd == 0,
                       std::to_string(runs) + " runs; M-step " + std::to_string(th) + ", candidate bound " +
                           std::to_string(lem) + ", cost decrease " + std::to_string(cd) + " violations"};
    });

    criterion(5, "benchmark SSE bands", 600.0, [] {
        const double s0 = mean_sse(1e-3, 128, 0);
        const double s1 = mean_sse(1e-3, 128, 1);
        const double sc = mean_sse(1e-3, 128, kConverged);
        const bool b0 = s0 >= 25.0 && s0 <= 65.0;
        const bool b1 = s1 >= 1.0 && s1 <= 15.0;
        const bool ratio = s0 / s1 >= 5.0;
        const bool conv = sc <= 1.05 * s1;
        std::string d = fmt("SSE(i=0)=%.3f", s0) + (b0 ? " in" : " outside") + " [25,65], " +
                        fmt("SSE(i=1)=%.3f", s1) + (b1 ? " in" : " outside") + " [1,15], " +
                        fmt("ratio=%.2f", s0 / s1) + (ratio ? " >= 5" : " < 5") + ", " +
                        fmt("SSE(converged)=%.3f", sc) + (conv ? " <= " : " > ") + "1.05 SSE(i=1)";
        return Outcome{b0 && b1 && ratio && conv, d};
    });

    criterion(6, "zero iterations equal the observer", 60.0, [] {
        std::size_t mismatched = 0, runs = 0;
        for (const SweepConfig& c : kSweep) {
            for (int seed = 0; seed < kSeeds; ++seed) {
                const SimTrace tr = run_closed_loop(sweep_scenario(c, 0, static_cast<std::uint64_t>(seed)));
                ++runs;
                for (std::size_t t = 0; t < tr.size(); ++t) {
                    if (tr.xhat[t] != tr.observer[t]) {
                        ++mismatched;
                        break;
                    }
                }
            }
        }
        return Outcome{mismatched == 0,
                       std::to_string(mismatched) + " of " + std::to_string(runs) + " traces differ bitwise"};
    });

    criterion(7, "window jacobian against central differences", 60.0, [] {
        const SystemModel model = make_reactor_model();
        const AuxObserver obs = make_reactor_observer(model);
        const LyapunovCertificate cert = fixture::benchmark_cert();
        const CounterRng rng(2024, 77);
        std::uint64_t c = 0;
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const int M = 1 + static_cast<int>(rng.uniform(c++, 0.0, 128.0)) % 128;
            MheConfig cfg = fixture::benchmark_mhe(trial % 2 ? 1e2 : 1e-3, M, 1);
            if (trial % 3 == 0) cfg.form = EstimatorForm::Prediction;

            WindowBuffer buf(M, vec({0.1, 4.5}));
            Vector x = vec({rng.uniform(c++, 0.5, 5.5), rng.uniform(c++, 0.5, 5.5)});
            for (int t = 0; t <= M; ++t) {
                buf.push(kNoInput, output(model, x, kNoInput, vec({rng.uniform(c++, -1e-2, 1e-2)})));
                if (t < M) buf.publish(vec({0.1, 4.5}));
                x = step_system(model, x, kNoInput, vec({rng.uniform(c++, -2e-3, 2e-3), rng.uniform(c++, -2e-3, 2e-3)}));
            }
            WindowProblem p;
            p.model = &model;
            p.observer = &obs;
            p.cert = &cert;
            p.cfg = &cfg;
            p.window = Window::from_buffer(buf, M, cfg.form);
            p.prior = vec({rng.uniform(c++, 0.1, 6.0), rng.uniform(c++, 0.0, 6.0)});
            p.constants = CostConstants::from(cfg, cert);

            const Vector x0 = vec({rng.uniform(c++, 0.2, 5.9), rng.uniform(c++, 0.0, 6.0)});
            const Matrix J = jacobian_rollout(p, x0);
            Matrix fd(J.rows(), J.cols());
            for (Eigen::Index k = 0; k < 2; ++k) {
                Vector xp = x0, xm = x0;
                xp[k] += 1e-6;
                xm[k] -= 1e-6;
                fd.col(k) = (residual(p, xp) - residual(p, xm)) / 2e-6;
            }
            worst = std::max(worst, (J - fd).norm() / std::max(fd.norm(), 1e-300));
        }
        return Outcome{worst < 1e-5, fmt("worst relative error %.3g over 100 windows", worst)};
    });

    criterion(8, "gamma limits at M=1000", 1.0, [] {
        bool ok = true;
        std::string d;
        for (double a : {1e2, 1e-3}) {
            const TheoremGammas g =
                theorem_gammas(benchmark_params(a), EstimatorForm::Prediction, CandidateMode::Simple, 1000, 1000);
            ok = ok && g.g1 < 1e-10 && g.g2 >= 1.0 && g.g2 <= 1.0 + 1e-6 && g.g3 >= 1.0 && g.g3 <= 1.0 + 1e-6;
            if (!d.empty()) d += "; ";
            d += fmt("a=%g: ", a) + fmt("g1=%.3g ", g.g1) + fmt("g2-1=%.3g ", g.g2 - 1.0) +
                 fmt("g3-1=%.3g", g.g3 - 1.0);
        }
        return Outcome{ok, d};
    });

    criterion(9, "simulate output is byte-identical across runs", 60.0, [] {
        const std::string config = std::string(OBSMHE_SOURCE_DIR) + "/configs/reactor_benchmark.json";
        const auto dir = std::filesystem::path(OBSMHE_BINARY_DIR) / "acceptance_scratch";
        std::filesystem::create_directories(dir);
        std::string text[2];
        for (int k = 0; k < 2; ++k) {
            const std::string path = (dir / ("run" + std::to_string(k) + ".csv")).string();
            std::ostringstream out, err;
            if (run_cli({"simulate", config, "--seed", "42", "--out", path}, out, err) != kExitOk) {
                return Outcome{false, "simulate failed: " + err.str()};
            }
            std::ifstream in(path, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            text[k] = ss.str();
        }
        return Outcome{!text[0].empty() && text[0] == text[1],
                       std::to_string(text[0].size()) + " bytes, " + (text[0] == text[1] ? "identical" : "differ")};
    });

    criterion(10, "noise-free exact start gives zero error", 60.0, [] {
        double worst = 0.0;
        int runs = 0;
        for (const SweepConfig& c : kSweep) {
            for (int it : {0, 1, 5, kConverged}) {
                Scenario sc = sweep_scenario(c, it, 0);
                sc.w_box = Box::symmetric(Vector::Zero(2));
                sc.v_box = Box::symmetric(Vector::Zero(1));
                sc.xhat0 = sc.x0;
                worst = std::max(worst, sse(run_closed_loop(sc)));
                ++runs;
            }
        }
        return Outcome{worst == 0.0, fmt("largest SSE %.3g", worst) + " over " + std::to_string(runs) + " runs"};
    });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
