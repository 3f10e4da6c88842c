#include "obsmhe/lyapcert.hpp"

#include "obsmhe/rng.hpp"

#include <algorithm>
#include <cmath>

namespace obsmhe {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr std::size_t kMaxWitnesses = 8;

void require_symmetric(const Matrix& A, const char* what) {
    if (A.rows() != A.cols()) throw MatrixError(std::string(what) + ": matrix is not square");
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
        throw MatrixError(std::string(what) + ": matrix is not symmetric");
    }
}

Eigen::VectorXd symmetric_eigenvalues(const Matrix& A) {
    const Matrix sym = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw MatrixError("symmetric eigensolver did not converge");
    return solver.eigenvalues();
}

}  // namespace

const char* to_string(EstimatorForm form) {
    return form == EstimatorForm::Prediction ? "prediction" : "filtering";
}

const char* to_string(CandidateMode mode) { return mode == CandidateMode::Simple ? "simple" : "reinit"; }

EstimatorForm parse_form(const std::string& text) {
    if (text == "prediction") return EstimatorForm::Prediction;
    if (text == "filtering") return EstimatorForm::Filtering;
    throw ConfigError("unknown estimator form '" + text + "' (expected prediction|filtering)");
}

CandidateMode parse_candidate_mode(const std::string& text) {
    if (text == "simple") return CandidateMode::Simple;
    if (text == "reinit") return CandidateMode::Reinit;
    throw ConfigError("unknown candidate mode '" + text + "' (expected simple|reinit)");
}

LyapunovCertificate LyapunovCertificate::quadratic(const Matrix& P, double eta, const Matrix& Q,
                                                   const Matrix& R) {
    LyapunovCertificate cert;
    cert.P1 = P;
    cert.P2 = P;
    cert.eta = eta;
    cert.Q = Q;
    cert.R = R;
    cert.quadratic_P = P;
    cert.validate();
    return cert;
}

void LyapunovCertificate::validate() const {
    require_symmetric(P1, "certificate P1");
    require_symmetric(P2, "certificate P2");
    require_symmetric(Q, "certificate Q");
    require_symmetric(R, "certificate R");
    if (P1.rows() != P2.rows()) throw MatrixError("certificate: P1 and P2 differ in dimension");
    if (min_eigenvalue(P1) <= 0.0) throw MatrixError("certificate: P1 must be positive definite");
    if (min_eigenvalue(P2) <= 0.0) throw MatrixError("certificate: P2 must be positive definite");
    if (Q.size() > 0 && min_eigenvalue(Q) < 0.0) throw MatrixError("certificate: Q must be positive semidefinite");
    if (R.size() > 0 && min_eigenvalue(R) < 0.0) throw MatrixError("certificate: R must be positive semidefinite");
    if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("certificate: eta must lie in [0, 1)");
    if (quadratic_P) {
        require_symmetric(*quadratic_P, "certificate P");
        if (quadratic_P->rows() != P1.rows()) throw MatrixError("certificate: P has wrong dimension");
    }
}

double v_o(const LyapunovCertificate& cert, const Vector& z, const Vector& x) {
    if (cert.quadratic_P) {
        require_dim(z, cert.quadratic_P->rows(), "v_o observer state");
        require_dim(x, cert.quadratic_P->rows(), "v_o state");
        return weighted_sq_norm(z - x, *cert.quadratic_P);
    }
    if (cert.evaluator) return cert.evaluator(z, x);
    throw UnsupportedCertificateError("v_o: certificate is neither quadratic nor has an evaluator");
}

double min_eigenvalue(const Matrix& A) {
    require_symmetric(A, "min_eigenvalue");
    return symmetric_eigenvalues(A).minCoeff();
}

double max_eigenvalue(const Matrix& A) {
    require_symmetric(A, "max_eigenvalue");
    return symmetric_eigenvalues(A).maxCoeff();
}

double generalized_eig_max(const Matrix& A, const Matrix& B) {
    require_symmetric(A, "generalized_eig_max A");
    require_symmetric(B, "generalized_eig_max B");
    if (A.rows() != B.rows()) throw MatrixError("generalized_eig_max: dimension mismatch");
    const Matrix Bs = 0.5 * (B + B.transpose());
    Eigen::LLT<Matrix> llt(Bs);
    if (llt.info() != Eigen::Success || min_eigenvalue(Bs) <= 0.0) {
        throw MatrixError("generalized_eig_max: B is not positive definite");
    }
    // B = L L', so B^-1 A is similar to L^-1 A L^-T.
    const Matrix Linv_A = llt.matrixL().solve(0.5 * (A + A.transpose()));
    const Matrix C = llt.matrixL().solve(Linv_A.transpose()).transpose();
    return symmetric_eigenvalues(C).maxCoeff();
}

GammaParams GammaParams::from(const LyapunovCertificate& cert, const Matrix& W) {
    cert.validate();
    GammaParams p;
    p.lam_P2_P1 = generalized_eig_max(cert.P2, cert.P1);
    p.lam_P2_W = generalized_eig_max(cert.P2, W);
    p.lam_min_P1 = min_eigenvalue(cert.P1);
    p.lam_min_R = cert.R.size() > 0 ? min_eigenvalue(cert.R) : 0.0;
    p.eta = cert.eta;
    return p;
}

double eval_gamma(GammaKind kind, double k, double r, double s, const GammaParams& p, bool reinit) {
    if (k < 0.0 || r < 0.0 || s < 0.0) throw PreconditionError("eval_gamma: arguments must be nonnegative");
    const double base = reinit ? 2.0 * p.lam_P2_P1 : 1.0;
    switch (kind) {
    case GammaKind::One:
        return 2.0 * p.lam_P2_P1 * std::pow(p.eta, s) + p.lam_P2_W * k * std::pow(p.eta, r + s);
    case GammaKind::Two:
        return base + p.lam_P2_W * k * std::pow(p.eta, r);
    case GammaKind::Three:
        if (!(p.lam_min_R > 0.0)) {
            throw MatrixError("eval_gamma: gamma3 divides by lambda_min(R), which is zero");
        }
        return base + p.lam_P2_W * (p.eta * p.lam_min_P1 / p.lam_min_R + k) * std::pow(p.eta, r);
    }
    return 0.0;
}

TheoremGammas theorem_gammas(const GammaParams& params, EstimatorForm form, CandidateMode mode, int M,
                             int T) {
    const bool filtering = form == EstimatorForm::Filtering;
    const bool reinit = mode == CandidateMode::Reinit;
    const double k = filtering ? M + 1.0 : M;
    const double s = reinit ? T : M;
    TheoremGammas g;
    g.g1 = eval_gamma(GammaKind::One, k, M, s, params, reinit);
    g.g2 = eval_gamma(GammaKind::Two, k, M, 0.0, params, reinit);
    g.g3 = eval_gamma(GammaKind::Three, k, M, 0.0, params, reinit);
    if (filtering) g.g3 /= params.eta;
    return g;
}

namespace {

template <typename Cond>
int scan_with_verification(int start, int cap, Cond&& cond) {
    int m = start;
    while (m <= cap) {
        if (!cond(m)) {
            ++m;
            continue;
        }
        int failed = 0;
        for (int k = m + 1; k <= m + kVerifyWindow; ++k) {
            if (!cond(k)) {
                failed = k;
                break;
            }
        }
        if (failed == 0) return m;
        m = failed + 1;
    }
    return -1;
}

}  // namespace

HorizonResult min_horizon(const GammaParams& params, EstimatorForm form, int cap) {
    if (cap < 1) throw PreconditionError("min_horizon: cap must be at least 1");
    auto gamma1 = [&](int m) {
        const double k = form == EstimatorForm::Filtering ? m + 1.0 : m;
        return eval_gamma(GammaKind::One, k, m, m, params);
    };
    const int found = scan_with_verification(1, cap, [&](int m) { return gamma1(m) < 1.0; });
    if (found < 0) {
        throw CertificationError("min_horizon: no horizon up to " + std::to_string(cap) +
                                     " satisfies gamma1 < 1",
                                 gamma1(cap));
    }
    HorizonResult out;
    out.value = found;
    out.gammas = theorem_gammas(params, form, CandidateMode::Simple, found, found);
    out.scan_cap = cap;
    return out;
}

HorizonResult min_T(const GammaParams& params, int M, EstimatorForm form, int cap) {
    if (M < 1) throw PreconditionError("min_T: M must be at least 1");
    if (cap < M) throw PreconditionError("min_T: cap must be at least M");
    const double k = form == EstimatorForm::Filtering ? M + 1.0 : M;
    auto gamma1 = [&](int t) { return eval_gamma(GammaKind::One, k, M, t, params); };
    const int found = scan_with_verification(M, cap, [&](int t) { return gamma1(t) < 1.0; });
    if (found < 0) {
        throw CertificationError("min_T: no restart depth up to " + std::to_string(cap) +
                                     " satisfies gamma1 < 1",
                                 gamma1(cap));
    }
    HorizonResult out;
    out.value = found;
    out.gammas = theorem_gammas(params, form, CandidateMode::Reinit, M, found);
    out.scan_cap = cap;
    return out;
}

DissipationReport check_dissipation(const LyapunovCertificate& cert, const SystemModel& model,
                                    const AuxObserver& obs, std::size_t sample_count, std::uint64_t seed,
                                    double slack) {
    cert.validate();
    if (!(slack >= 0.0)) throw ConfigError("check_dissipation: slack must be nonnegative");
    if (sample_count == 0) throw ConfigError("check_dissipation: sample_count must be positive");
    const Box* boxes[] = {&obs.sample_box, &model.state_box, &model.input_box, &model.dist_box, &model.noise_box};
    for (const Box* box : boxes) {
        if (!box->is_finite()) throw ConfigError("check_dissipation: sample domain must be a finite box");
    }
    if (obs.sample_box.dim() != model.state_dim) throw ConfigError("check_dissipation: empty observer sample domain");

    const CounterRng rng(seed, /*stream=*/0xd155);
    std::uint64_t per_sample = 0;
    for (const Box* box : boxes) per_sample += static_cast<std::uint64_t>(box->dim());

    DissipationReport report;
    report.samples = sample_count;
    for (std::size_t s = 0; s < sample_count; ++s) {
        std::uint64_t counter = s * per_sample;
        auto draw = [&](const Box& box) {
            Vector out(box.dim());
            for (Eigen::Index i = 0; i < box.dim(); ++i) out[i] = rng.uniform(counter++, box.lower[i], box.upper[i]);
            return out;
        };
        DissipationWitness tuple;
        tuple.z = draw(obs.sample_box);
        tuple.x = draw(model.state_box);
        tuple.u = draw(model.input_box);
        tuple.w = draw(model.dist_box);
        tuple.v = draw(model.noise_box);

        const Vector y = model.output_map(tuple.x, tuple.u, tuple.v);
        const Vector z_next = observer_step(obs, 0, tuple.z, tuple.u, y);
        const Vector x_next = model.dynamics(tuple.x, tuple.u, tuple.w);
        tuple.margin = v_o(cert, z_next, x_next) - cert.eta * v_o(cert, tuple.z, tuple.x) -
                       weighted_sq_norm(tuple.w, cert.Q) - weighted_sq_norm(tuple.v, cert.R);
        report.worst_margin = std::max(report.worst_margin, tuple.margin);
        if (tuple.margin > slack) {
            ++report.violations;
            if (report.witnesses.size() < kMaxWitnesses) report.witnesses.push_back(std::move(tuple));
        }
    }
    return report;
}

}  // namespace obsmhe
