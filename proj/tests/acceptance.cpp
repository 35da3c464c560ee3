// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "sdiff/denoiser.hpp"
#include "sdiff/graphspec.hpp"
#include "sdiff/metrics.hpp"
#include "sdiff/schedule.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace sdiff;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v, int precision = 4) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << v;
    return ss.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> v;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
}

std::vector<std::string> fields(const std::string& line, char sep) {
    std::vector<std::string> v;
    std::istringstream in(line);
    for (std::string f; std::getline(in, f, sep);) v.push_back(f);
    return v;
}

/// Runs the CLI in `dir`, stdout to `out`; returns the exit status.
int cli(const fs::path& dir, const std::string& args, const fs::path& out) {
    const std::string cmd = "cd '" + dir.string() + "' && '" SDIFF_BIN "' " + args + " > '" + out.string() +
                            "' 2> '" + (dir / "stderr.txt").string() + "'";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("sdiff_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_tsv(const fs::path& path, const InteractionMatrix& m) {
    std::ofstream f(path);
    for (std::size_t u = 0; u < m.n_users(); ++u) {
        for (const auto i : m.row(static_cast<UserIndex>(u))) f << u << '\t' << i << '\n';
    }
}

SpectralBasis full_basis(const InteractionMatrix& m, std::uint64_t seed) {
    LanczosOptions o;
    o.rank = m.n_items();
    o.seed = seed;
    return build_spectral_basis(m, o);
}

// 1 -------------------------------------------------------------------------

Verdict spectral_equivalence() {
    const auto start = Clock::now();
    double worst = 0.0;
    std::mt19937 gen(101);
    for (unsigned trial = 0; trial < 6; ++trial) {
        const std::size_t items = 16 + 8 * trial;
        const auto m = testing::random_graph(2 * items, items, 0.15, trial + 1);
        const auto graph = build_normalized_bipartite(m);
        const auto basis = full_basis(m, trial);
        std::normal_distribution<double> normal;
        Eigen::VectorXd x(static_cast<Eigen::Index>(items));
        for (auto& v : x) v = normal(gen);
        for (const double t : {0.0, 0.1, 1.0}) {
            const Eigen::VectorXd spectral = igft(basis, (-t * basis.d).array().exp().matrix().cwiseProduct(gft(basis, x)));
            const Eigen::VectorXd spatial = heat_kernel_reference(graph, t, x);
            worst = std::max(worst, (spectral - spatial).lpNorm<Eigen::Infinity>());
        }
    }
    const double elapsed = seconds_since(start);
    return {worst <= 1e-8 && elapsed < 1.0,
            "max |spatial - spectral| " + num(worst, 3) + " over 6 graphs (16..56 items), " + num(elapsed, 3) + " s"};
}

// 2 -------------------------------------------------------------------------

fs::path movielens_file(std::string& label) {
    const fs::path data = fs::path(SDIFF_SOURCE_DIR) / "data";
    for (const auto* name : {"ml-1m.tsv", "ml-1m.dat"}) {
        if (fs::exists(data / name)) {
            label = "ML-1M";
            return data / name;
        }
    }
    label = "ML-100k stand-in";
    const auto path = data / "ml-100k.tsv";
    if (!fs::exists(path)) {
        const std::string cmd = "python3 '" + (fs::path(SDIFF_SOURCE_DIR) / "tools" / "fetch_movielens100k.py").string() +
                                "' --out '" + path.string() + "' > /dev/null 2>&1";
        if (std::system(cmd.c_str()) != 0) std::cerr << "fetch_movielens100k.py failed\n";
    }
    return path;
}

Verdict eigensolver() {
    double value_err = 0.0;
    double residual = 0.0;
    bool d_range = true;
    for (unsigned trial = 0; trial < 4; ++trial) {
        const std::size_t items = 64 + 16 * trial;
        const auto m = trial % 2 == 0 ? testing::random_graph(3 * items, items, 0.06, 20 + trial)
                                      : testing::two_block(3 * items, items, 0.2, 20 + trial);
        LanczosOptions o;
        o.rank = 40;
        o.seed = trial;
        const auto basis = build_spectral_basis(m, o);
        const Eigen::MatrixXd a = testing::dense_gram(m);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
        const auto n = a.rows();
        for (Eigen::Index i = 0; i < 40; ++i) {
            const double mu = 1.0 - basis.d[i];
            value_err = std::max(value_err, std::abs(mu - eig.eigenvalues()[n - 1 - i]));
            residual = std::max(residual, (a * basis.U.col(i) - mu * basis.U.col(i)).norm());
        }
        d_range = d_range && basis.d.minCoeff() >= 0.0 && basis.d.maxCoeff() <= 2.0;
    }

    std::string label;
    const auto path = movielens_file(label);
    if (!fs::exists(path)) return {false, "no MovieLens file at " + path.string()};
    const auto data = load_interactions(path);
    LanczosOptions o;
    o.rank = 200;
    o.seed = 1;
    const auto start = Clock::now();
    const auto basis = build_spectral_basis(data, o);
    const double elapsed = seconds_since(start);
    const double ortho = (basis.U.transpose() * basis.U - Eigen::MatrixXd::Identity(200, 200)).lpNorm<Eigen::Infinity>();
    d_range = d_range && basis.d.minCoeff() >= 0.0 && basis.d.maxCoeff() <= 2.0;

    return {value_err <= 1e-8 && residual <= 1e-8 && ortho <= 1e-6 && d_range,
            "eigenvalue err " + num(value_err, 3) + ", residual " + num(residual, 3) + " (<=128 items, K=40); " +
                label + " K=200: |U^T U - I|max " + num(ortho, 3) + ", d in [" + num(basis.d.minCoeff()) + ", " +
                num(basis.d.maxCoeff()) + "], " + num(elapsed, 3) + " s"};
}

// 3 -------------------------------------------------------------------------

Verdict schedule_properties() {
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(64, 0.0, 2.0);
    ScheduleParams unit;
    unit.alpha_min = 0.0;
    unit.sigma_max = 1.0;
    const NoiseSchedule vp(d, unit);
    double vp_err = 0.0;
    bool ordered = true;
    const double bound = std::exp(-4.0) / (1.0 - std::exp(-4.0));
    double min_ratio = 1e300;
    for (int j = 0; j < 100; ++j) {
        const double t = j / 99.0;
        const auto c = vp.at(t);
        vp_err = std::max(vp_err, (c.alpha.array().square() + c.sigma.array().square() - 1.0).abs().maxCoeff());
        if (t > 0.0) {
            for (Eigen::Index i = 1; i < d.size(); ++i) {
                ordered = ordered && c.alpha[i] <= c.alpha[i - 1] && c.sigma[i] >= c.sigma[i - 1];
            }
        }
        min_ratio = std::min(min_ratio, snr(vp, t).values.minCoeff() / bound);
    }
    // Defaults too: the clamped schedule keeps the ordering.
    const NoiseSchedule defaults(d, ScheduleParams{});
    for (int j = 1; j < 100; ++j) {
        const auto c = defaults.at(j / 99.0);
        for (Eigen::Index i = 1; i < d.size(); ++i) {
            ordered = ordered && c.alpha[i] <= c.alpha[i - 1] && c.sigma[i] >= c.sigma[i - 1];
        }
    }
    return {vp_err <= 1e-12 && ordered && min_ratio >= 1.0 - 1e-12 && std::abs(bound - 0.018658) <= 1e-6,
            "|a^2+s^2-1|max " + num(vp_err, 3) + ", ordering " + (ordered ? "holds" : "violated") +
                ", min SNR / bound " + num(min_ratio, 6) + " (bound " + num(bound, 6) + ")"};
}

// 4 -------------------------------------------------------------------------

Verdict forward_moments() {
    const auto start = Clock::now();
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(16, 0.0, 1.5);
    const NoiseSchedule s(d, ScheduleParams{});
    Eigen::VectorXd v0(16);
    for (Eigen::Index i = 0; i < 16; ++i) v0[i] = std::sin(1.0 + static_cast<double>(i));
    const int n = 10000;
    double worst_mean = 0.0;
    double worst_var = 0.0;
    bool exact_zero = true;
    for (const double t : {0.2, 0.6, 1.0}) {
        const auto c = s.at(t);
        Rng rng(static_cast<std::uint64_t>(1000 * t));
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(16);
        Eigen::VectorXd sq = Eigen::VectorXd::Zero(16);
        for (int k = 0; k < n; ++k) {
            const Eigen::VectorXd x = forward_sample(s, v0, t, rng);
            sum += x;
            sq += x.cwiseProduct(x);
        }
        for (Eigen::Index i = 0; i < 16; ++i) {
            const double mean = sum[i] / n;
            const double var = sq[i] / n - mean * mean;
            const double expect_mean = c.alpha[i] * v0[i];
            const double expect_var = c.sigma[i] * c.sigma[i];
            if (expect_var == 0.0) {
                exact_zero = exact_zero && std::abs(mean - expect_mean) <= 1e-12 && std::abs(var) <= 1e-12;
                continue;
            }
            worst_mean = std::max(worst_mean, std::abs(mean - expect_mean) / std::sqrt(expect_var / n));
            worst_var = std::max(worst_var, std::abs(var - expect_var) / std::sqrt(2.0 * expect_var * expect_var / (n - 1)));
        }
    }
    const double elapsed = seconds_since(start);
    return {worst_mean <= 4.0 && worst_var <= 4.0 && exact_zero && elapsed < 10.0,
            "worst mean dev " + num(worst_mean, 3) + " SE, worst variance dev " + num(worst_var, 3) +
                " SE (1e4 draws, 3 times, 16 coords), " + num(elapsed, 3) + " s"};
}

// 5 -------------------------------------------------------------------------

Verdict gradient_check() {
    const auto start = Clock::now();
    const DenoiserShape shape{8, 16, 8, 4};
    auto p = DenoiserParams<double>::zeros(shape);
    Rng rng(7);
    for (auto* m : p.tensors()) {
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.5 * rng.uniform(-1.0, 1.0);
    }
    const int b = 4;
    DenoiserBatch<double> batch{Eigen::MatrixXd(8, b), Eigen::MatrixXd(8, b), Eigen::VectorXd(b), Eigen::MatrixXd(8, b)};
    for (Eigen::Index i = 0; i < batch.noisy.size(); ++i) {
        batch.noisy.data()[i] = rng.normal();
        batch.condition.data()[i] = rng.normal();
        batch.target.data()[i] = rng.normal();
    }
    for (int j = 0; j < b; ++j) batch.t[j] = rng.uniform();

    DenoiserParams<double> grad;
    loss_and_grad(p, batch, &grad);
    const double h = 1e-6;
    auto tensors = p.tensors();
    const auto grads = grad.tensors();
    double worst = 0.0;
    std::string worst_name;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        auto& w = *tensors[k];
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double saved = w.data()[i];
            w.data()[i] = saved + h;
            const double up = loss_and_grad<double>(p, batch, nullptr);
            w.data()[i] = saved - h;
            const double down = loss_and_grad<double>(p, batch, nullptr);
            w.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grads[k]->data()[i];
            const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            if (rel > worst) {
                worst = rel;
                worst_name = DenoiserParams<double>::kTensorNames[k];
            }
        }
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-4 && elapsed < 30.0, "worst relative error " + num(worst, 3) + " (" + worst_name + ") over " +
                                                std::to_string(tensors.size()) + " groups, " + num(elapsed, 3) + " s"};
}

// 6 -------------------------------------------------------------------------

Verdict metric_oracle() {
    std::size_t cases = 0;
    std::size_t mismatches = 0;
    for (std::size_t n = 1; n <= 6; ++n) {
        for (unsigned mask = 1; mask < (1u << n); ++mask) {
            std::set<ItemIndex> truth_set;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask & (1u << i)) truth_set.insert(static_cast<ItemIndex>(i));
            }
            const std::vector<ItemIndex> truth(truth_set.begin(), truth_set.end());
            std::vector<ItemIndex> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            do {
                for (std::size_t k = 1; k <= n; ++k) {
                    const auto expect = testing::naive_metrics(perm, truth_set, k);
                    ++cases;
                    if (recall_at_k(perm, truth, k) != expect.recall || ndcg_at_k(perm, truth, k) != expect.ndcg) {
                        ++mismatches;
                    }
                }
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
    }
    return {mismatches == 0, std::to_string(cases) + " (ranking, truth, k) cases, " + std::to_string(mismatches) +
                                 " mismatches"};
}

// 7 -------------------------------------------------------------------------

std::map<std::string, std::pair<double, double>> read_metrics(const fs::path& path, const std::string& k) {
    std::map<std::string, std::pair<double, double>> out;
    for (const auto& l : lines(slurp(path))) {
        const auto f = fields(l, ',');
        if (f.size() >= 6 && f[3] == k) out[f[0]] = {std::stod(f[4]), std::stod(f[5])};
    }
    return out;
}

Verdict synthetic_end_to_end() {
    const auto dir = scratch("synthetic");
    write_tsv(dir / "blocks.tsv", testing::two_block(200, 60, 0.9, 1));
    const std::string base = "--data blocks.tsv --out run --k 60 --eval-every 10 --topk 10 --seed 1 --deterministic -q ";
    const auto start = Clock::now();
    const auto log = dir / "stdout.txt";
    if (cli(dir, base + "prepare", log) != 0 || cli(dir, base + "train", log) != 0 ||
        cli(dir, base + "evaluate --runs 1", log) != 0) {
        return {false, "CLI failed: " + slurp(dir / "stderr.txt")};
    }
    const double elapsed = seconds_since(start);
    const auto m = read_metrics(dir / "run" / "metrics_test.csv", "10");
    if (!m.count("s-diff") || !m.count("popularity")) return {false, "metrics_test.csv incomplete"};
    const double model = m.at("s-diff").first;
    const double pop = m.at("popularity").first;
    fs::remove_all(dir);
    return {model >= 0.9 && model > pop && elapsed < 300.0,
            "two-block 200x60: test recall@10 " + num(model) + " vs popularity " + num(pop) + ", " + num(elapsed, 3) +
                " s single-threaded"};
}

// 8 -------------------------------------------------------------------------

Verdict ablation_direction() {
    std::string label;
    const auto data = movielens_file(label);
    if (!fs::exists(data)) return {false, "no MovieLens file at " + data.string() + " and the fetch script failed"};
    const auto dir = scratch("ablation");
    const auto start = Clock::now();
    if (cli(dir, "--data '" + data.string() + "' --out run --seed 1 --deterministic -q ablate --runs 3 --variants vp,iso",
            dir / "table.txt") != 0) {
        return {false, "CLI failed: " + slurp(dir / "stderr.txt")};
    }
    const double elapsed = seconds_since(start);

    std::map<std::string, std::map<int, std::pair<double, double>>> at10;
    for (const auto& l : lines(slurp(dir / "run" / "ablation.csv"))) {
        const auto f = fields(l, ',');
        if (f.size() == 6 && f[3] == "10") at10[f[0]][std::stoi(f[1])] = {std::stod(f[4]), std::stod(f[5])};
    }
    if (at10["vp"].size() != 3 || at10["iso"].size() != 3 || at10["popularity"].empty()) {
        return {false, "ablation.csv incomplete"};
    }
    const auto [pop_r, pop_n] = at10["popularity"].at(0);
    bool direction = true;
    bool margin = true;
    double vp_mean = 0.0;
    double iso_mean = 0.0;
    std::string per_seed;
    for (int r = 0; r < 3; ++r) {
        const auto [vr, vn] = at10["vp"].at(r);
        const auto ir = at10["iso"].at(r).first;
        direction = direction && vr > ir;
        margin = margin && vr >= 1.3 * pop_r && vn >= 1.3 * pop_n;
        vp_mean += vr / 3.0;
        iso_mean += ir / 3.0;
        per_seed += (r ? ", " : "") + num(vr) + "/" + num(ir);
    }
    double vp_ndcg = 0.0;
    for (int r = 0; r < 3; ++r) vp_ndcg += at10["vp"].at(r).second / 3.0;
    fs::remove_all(dir);

    const bool soft = vp_mean >= 0.10 && vp_mean <= 0.14;
    std::ostringstream detail;
    detail << label << ": recall@10 vp/iso per seed " << per_seed << " -> vp > iso " << (direction ? "yes" : "NO")
           << "; vp vs popularity recall@10 " << num(vp_mean) << " vs " << num(pop_r) << " (+"
           << num(100.0 * (vp_mean / pop_r - 1.0), 3) << "%), ndcg@10 " << num(vp_ndcg) << " vs " << num(pop_n)
           << " (+" << num(100.0 * (vp_ndcg / pop_n - 1.0), 3) << "%) -> >=30% " << (margin ? "yes" : "NO")
           << "; soft target R@10 in [0.10, 0.14]: " << (soft ? "inside" : "outside") << " (not gating); "
           << num(elapsed / 60.0, 3) << " min";
    return {direction && margin, detail.str()};
}

// 9 -------------------------------------------------------------------------

Verdict snr_contrast() {
    const auto dir = scratch("snr");
    if (cli(dir, "snr --variant vp --variant iso", dir / "snr.csv") != 0) {
        return {false, "CLI failed: " + slurp(dir / "stderr.txt")};
    }
    const auto rows = lines(slurp(dir / "snr.csv"));
    double vp_min = 1e300;
    double iso_end = -1.0;
    double t_max = 0.0;
    for (std::size_t r = 1; r < rows.size(); ++r) t_max = std::max(t_max, std::stod(fields(rows[r], ',')[1]));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto f = fields(rows[r], ',');
        const double value = std::stod(f[6]);
        if (f[0] == "vp") vp_min = std::min(vp_min, value);
        if (f[0] == "iso" && std::stod(f[1]) == t_max) iso_end = std::max(iso_end, value);
    }
    fs::remove_all(dir);
    return {iso_end >= 0.0 && iso_end < vp_min,
            "iso SNR at t=tau " + num(iso_end, 3) + " < vp minimum " + num(vp_min, 5) + " over " +
                std::to_string(rows.size() - 1) + " CSV rows"};
}

// 10 ------------------------------------------------------------------------

Verdict determinism() {
    const auto a = scratch("det_a");
    const auto b = scratch("det_b");
    const std::string base = "--data data.tsv --out run --k 40 --epochs 20 --eval-every 5 --seed 3 --deterministic -q ";
    for (const auto& dir : {a, b}) {
        write_tsv(dir / "data.tsv", testing::random_graph(150, 40, 0.15, 9));
        const auto log = dir / "stdout.txt";
        if (cli(dir, base + "prepare", log) != 0 || cli(dir, base + "train", log) != 0 ||
            cli(dir, base + "recommend --user 0 --user 17 --user 99", log) != 0) {
            return {false, "CLI failed: " + slurp(dir / "stderr.txt")};
        }
    }
    std::string differing;
    for (const auto* f : {"model.bin", "train_log.csv", "recommendations.tsv", "basis.bin", "manifest.json"}) {
        if (slurp(a / "run" / f) != slurp(b / "run" / f)) differing += std::string(" ") + f;
    }
    fs::remove_all(a);
    fs::remove_all(b);
    return {differing.empty(), differing.empty()
                                   ? "model.bin, train_log.csv, recommendations.tsv, basis.bin, manifest.json identical"
                                   : "differ:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
    // Optional arguments select criteria by number.
    std::set<std::size_t> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"spectral/spatial equivalence", spectral_equivalence},
        {"eigensolver correctness", eigensolver},
        {"schedule properties", schedule_properties},
        {"forward-marginal moments", forward_moments},
        {"gradient fidelity", gradient_check},
        {"metric oracle", metric_oracle},
        {"synthetic end-to-end", synthetic_end_to_end},
        {"ablation direction", ablation_direction},
        {"SNR contrast", snr_contrast},
        {"determinism", determinism},
    };
    std::size_t failed = 0;
    std::size_t ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(i + 1)) continue;
        ++ran;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << "criterion " << i + 1 << " [" << (v.pass ? "PASS" : "FAIL") << "] " << criteria[i].first << ": "
                  << v.detail << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
