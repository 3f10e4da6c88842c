#pragma once

#include "obsmhe/core.hpp"
#include "obsmhe/model.hpp"
#include "obsmhe/trace.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace obsmhe {

/// Prediction form drops the current measurement from the window cost,
/// filtering form includes it.
enum class EstimatorForm { Prediction, Filtering };

/// Simple: candidate is the past estimate. Reinit: the observer is restarted
/// T steps back and simulated forward to the window start.
enum class CandidateMode { Simple, Reinit };

const char* to_string(EstimatorForm form);
const char* to_string(CandidateMode mode);
EstimatorForm parse_form(const std::string& text);
CandidateMode parse_candidate_mode(const std::string& text);

/// delta-Lyapunov certificate of the auxiliary observer:
///
///     ||z - x||_P1^2 <= V_o(z, x) <= ||z - x||_P2^2
///     V_o(g(z, u, h(x, u, v)), f(x, u, w)) <= eta V_o(z, x) + ||w||_Q^2 + ||v||_R^2
struct LyapunovCertificate {
    using Evaluator = std::function<double(const Vector& z, const Vector& x)>;

    Matrix P1;
    Matrix P2;
    double eta = 0.0;
    Matrix Q;
    Matrix R;
    std::optional<Matrix> quadratic_P;  // V_o = ||z - x||_P^2 when set
    Evaluator evaluator;                // user hook for non-quadratic V_o

    static LyapunovCertificate quadratic(const Matrix& P, double eta, const Matrix& Q, const Matrix& R);

    void validate() const;
};

double v_o(const LyapunovCertificate& cert, const Vector& z, const Vector& x);

/// Generalized-eigenvalue scalars entering the gamma functions.
struct GammaParams {
    double lam_P2_P1 = 0.0;  // lambda_max(P2, P1)
    double lam_P2_W = 0.0;   // lambda_max(P2, W)
    double lam_min_P1 = 0.0;
    double lam_min_R = 0.0;
    double eta = 0.0;

    static GammaParams from(const LyapunovCertificate& cert, const Matrix& W);
};

enum class GammaKind { One, Two, Three };

/// gamma1bar(k, r, s) = 2 lam(P2,P1) eta^s + lam(P2,W) k eta^(r+s)
/// gamma2bar(k, r)    = c + lam(P2,W) k eta^r
/// gamma3bar(k, r)    = c + lam(P2,W) (eta lam_min(P1)/lam_min(R) + k) eta^r
///
/// c = 1, or 2 lam(P2,P1) for the re-initialized candidate (`reinit`).
/// `s` is ignored for gamma2/gamma3.
double eval_gamma(GammaKind kind, double k, double r, double s, const GammaParams& params,
                  bool reinit = false);

struct TheoremGammas {
    double g1 = 0.0;
    double g2 = 0.0;
    double g3 = 0.0;
};

/// Gamma values for window length M (and restart depth T in reinit mode), with
/// the filtering-form substitutions (k = M + 1, gamma3 divided by eta).
TheoremGammas theorem_gammas(const GammaParams& params, EstimatorForm form, CandidateMode mode, int M,
                             int T);

/// lambda_max(A, B): largest lambda with det(A - lambda B) = 0, B positive definite.
double generalized_eig_max(const Matrix& A, const Matrix& B);
double min_eigenvalue(const Matrix& A);
double max_eigenvalue(const Matrix& A);

struct HorizonResult {
    int value = 0;
    TheoremGammas gammas;
    int scan_cap = 0;
};

inline constexpr int kDefaultScanCap = 100000;
inline constexpr int kVerifyWindow = 200;

/// Smallest M >= 1 satisfying the contraction condition gamma1 < 1, checked to
/// keep holding over the next kVerifyWindow lengths.
HorizonResult min_horizon(const GammaParams& params, EstimatorForm form, int cap = kDefaultScanCap);

/// Smallest T >= M for which the re-initialized candidate satisfies the
/// contraction condition.
HorizonResult min_T(const GammaParams& params, int M, EstimatorForm form, int cap = kDefaultScanCap);

// ---------------------------------------------------------------------------
// Falsification and trace checks.

struct DissipationWitness {
    Vector z, x, u, w, v;
    double margin = 0.0;
};

struct DissipationReport {
    std::size_t samples = 0;
    std::size_t violations = 0;
    double worst_margin = -kInf;
    std::vector<DissipationWitness> witnesses;  // first few violating tuples
};

/// Samples (z, x, u, w, v) and reports every dissipation margin above `slack`.
/// Zero violations means "not falsified", never a proof.
DissipationReport check_dissipation(const LyapunovCertificate& cert, const SystemModel& model,
                                    const AuxObserver& obs, std::size_t sample_count, std::uint64_t seed,
                                    double slack);

struct InequalityViolation {
    std::size_t t = 0;
    double lhs = 0.0;
    double rhs = 0.0;
};

struct InequalityReport {
    std::string name;
    std::size_t checked = 0;
    std::size_t violations = 0;
    double worst_margin = -kInf;  // max over t of lhs - rhs
    std::vector<InequalityViolation> witnesses;

    bool ok() const { return violations == 0; }
};

/// Everything the offline inequality checks need besides the trace itself.
struct VerificationContext {
    LyapunovCertificate cert;
    GammaParams params;
    int M = 1;
    int T = 1;
    EstimatorForm form = EstimatorForm::Prediction;
    CandidateMode mode = CandidateMode::Simple;
    double lipschitz_h = 1.0;
    const AuxObserver* observer = nullptr;  // required in reinit mode
};

/// M-step decrease: V_o(xhat_t, x_t) against the gamma-weighted bound.
InequalityReport check_mstep_decrease(const SimTrace& trace, const VerificationContext& ctx);

/// Bound on the candidate cost Jtilde_t.
InequalityReport check_lemma1(const SimTrace& trace, const VerificationContext& ctx);

/// J_t(solution) <= Jtilde_t, exact comparison.
InequalityReport check_cost_decrease(const SimTrace& trace);

struct RgesConstants {
    double C1 = 1.0, C2 = 1.0, C3 = 1.0;
    double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
};

enum class EstimateSource { Estimator, Observer };

struct RgesFormReport {
    std::size_t violations = 0;
    // Smallest common factor on C1..C3 making the trace conform.
    double required_scaling = 0.0;
};

struct RgesReport {
    RgesFormReport max_form;
    RgesFormReport sum_form;
};

RgesReport check_rges_envelope(const SimTrace& trace, const RgesConstants& constants,
                               EstimateSource source = EstimateSource::Estimator);

}  // namespace obsmhe
