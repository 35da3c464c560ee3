// sdiff: command-line driver for the spectral diffusion recommender.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sdiff/dataio.hpp"
#include "sdiff/denoiser.hpp"
#include "sdiff/graphspec.hpp"
#include "sdiff/metrics.hpp"
#include "sdiff/sampler.hpp"
#include "sdiff/schedule.hpp"
#include "sdiff/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sdiff;

namespace {

struct Options {
    std::string data;
    std::string format = "auto";
    std::size_t k = 200;
    std::size_t lanczos_iters = 10;
    double lanczos_tol = 1e-8;
    double tau = 1.0;
    int steps = 5;
    double alpha_min = 0.05;
    double sigma_max = 0.45;
    std::string variant = "vp";
    double iso_sigma_end = 1.0;
    double guidance = 0.02;
    std::size_t ensemble = 1;
    double p_uncond = 0.02;
    double p_mask = 0.5;
    std::string dropout = "example";
    std::size_t batch_size = 100;
    double lr = 1e-4;
    std::size_t epochs = 1000;
    std::size_t patience = 20;
    std::size_t eval_every = 1;
    std::size_t hidden = 1024;
    std::size_t time_dim = 64;
    std::size_t film_width = 16;
    std::vector<std::size_t> topk{10, 20};
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string out = "run";
    bool deterministic = false;
    bool quiet = false;
};

json options_json(const Options& o) {
    return json{{"data", o.data},
                {"format", o.format},
                {"k", o.k},
                {"lanczos_iters", o.lanczos_iters},
                {"lanczos_tol", o.lanczos_tol},
                {"tau", o.tau},
                {"steps", o.steps},
                {"alpha_min", o.alpha_min},
                {"sigma_max", o.sigma_max},
                {"variant", o.variant},
                {"iso_sigma_end", o.iso_sigma_end},
                {"guidance_s", o.guidance},
                {"ensemble", o.ensemble},
                {"p_uncond", o.p_uncond},
                {"p_mask", o.p_mask},
                {"dropout", o.dropout},
                {"batch_size", o.batch_size},
                {"lr", o.lr},
                {"epochs", o.epochs},
                {"patience", o.patience},
                {"eval_every", o.eval_every},
                {"hidden", o.hidden},
                {"time_dim", o.time_dim},
                {"film_width", o.film_width},
                {"topk", o.topk},
                {"seed", o.seed},
                {"threads", o.threads},
                {"out", o.out},
                {"deterministic", o.deterministic}};
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "io_error", "cannot read " + path.string());
    Fnv1a h;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return h.digest();
}

/// Output files are written under a temporary name and renamed on commit;
/// anything not committed is removed, so a failed command leaves no partial
/// artifacts behind.
class Staging {
public:
    ~Staging() {
        std::error_code ec;
        for (const auto& [tmp, dst] : pending_) fs::remove(tmp, ec);
    }

    fs::path stage(const fs::path& dst) {
        fs::path tmp = dst;
        tmp += ".tmp";
        pending_.emplace_back(tmp, dst);
        return tmp;
    }

    void commit() {
        for (const auto& [tmp, dst] : pending_) fs::rename(tmp, dst);
        pending_.clear();
    }

private:
    std::vector<std::pair<fs::path, fs::path>> pending_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "io_error", "cannot write " + path.string());
    out << text;
    require(static_cast<bool>(out), "io_error", "write failed: " + path.string());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "io_error", "cannot write " + path.string());
    return out;
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class Manifest {
public:
    explicit Manifest(fs::path dir) : path_(std::move(dir) / "manifest.json") {
        if (fs::exists(path_)) {
            std::ifstream in(path_);
            try {
                doc_ = json::parse(in);
            } catch (const json::exception& e) {
                throw Error("bad_artifact", path_.string() + ": " + e.what());
            }
        }
    }

    bool has(const std::string& stage) const { return doc_.contains(stage); }

    const json& at(const std::string& stage) const {
        if (!doc_.contains(stage)) {
            throw Error("missing_artifact", path_.parent_path().string() + " has no '" + stage +
                                                "' record; run `sdiff " + stage + "` first");
        }
        return doc_.at(stage);
    }

    void record(const std::string& stage, const Options& o, json inputs, json artifacts, Staging& staging) {
        json entry;
        entry["config"] = options_json(o);
        entry["inputs"] = std::move(inputs);
        entry["artifacts"] = std::move(artifacts);
        entry["seed"] = o.seed;
        entry["timestamp"] = o.deterministic ? json(nullptr) : json(timestamp());
        doc_[stage] = std::move(entry);
        write_text(staging.stage(path_), doc_.dump(2) + "\n");
    }

private:
    fs::path path_;
    json doc_ = json::object();
};

json artifact_entry(const fs::path& tmp, const fs::path& dst) {
    return json{{"path", dst.filename().string()}, {"fnv1a", hex64(file_hash(tmp))}};
}

ScheduleParams schedule_params(const Options& o) {
    ScheduleParams p;
    p.tau = o.tau;
    p.steps = o.steps;
    p.alpha_min = o.alpha_min;
    p.sigma_max = o.sigma_max;
    p.variant = parse_variant(o.variant);
    p.iso_sigma_end = o.iso_sigma_end;
    return p;
}

TrainConfig train_config(const Options& o, std::size_t rank) {
    TrainConfig c;
    c.batch_size = o.batch_size;
    c.lr = o.lr;
    c.max_epochs = o.epochs;
    c.p_uncond = o.p_uncond;
    c.p_mask = o.p_mask;
    c.dropout = parse_dropout_mode(o.dropout);
    c.eval_every = o.eval_every;
    c.patience = o.patience;
    c.seed = o.seed;
    c.shape = DenoiserShape{rank, o.hidden, o.time_dim, o.film_width};
    c.guidance = o.guidance;
    c.threads = o.threads;
    c.deterministic = o.deterministic;
    return c;
}

struct Prepared {
    InteractionMatrix data;
    DatasetSplit split;
    SpectralBasis basis;
};

fs::path data_path(const Options& o, const Manifest& manifest) {
    if (!o.data.empty()) return o.data;
    return manifest.at("prepare").at("config").at("data").get<std::string>();
}

void check_split_matches(const InteractionMatrix& data, const DatasetSplit& split) {
    require(split.n_users() == data.n_users(), "hash_mismatch", "split does not match the data");
    for (std::size_t u = 0; u < data.n_users(); ++u) {
        std::vector<ItemIndex> all;
        for (const auto* part : {&split.train[u], &split.val[u], &split.test[u]}) {
            all.insert(all.end(), part->begin(), part->end());
        }
        std::sort(all.begin(), all.end());
        const auto row = data.row(static_cast<UserIndex>(u));
        require(std::equal(all.begin(), all.end(), row.begin(), row.end()), "hash_mismatch",
                "split does not match the data for user " + data.user_id(static_cast<UserIndex>(u)));
    }
}

Prepared load_prepared(const Options& o, const Manifest& manifest) {
    const fs::path dir = o.out;
    const auto& prep = manifest.at("prepare");
    Prepared p;
    p.data = load_interactions(data_path(o, manifest), parse_format(o.format));
    require(hex64(p.data.content_hash()) == prep.at("inputs").at("data_hash").get<std::string>(), "hash_mismatch",
            "interaction data differs from the data prepared in " + dir.string());
    p.split = read_split_manifest(dir / "split.tsv", p.data.n_users(), p.data.n_items());
    check_split_matches(p.data, p.split);
    p.basis = load_basis(dir / "basis.bin");
    require(p.basis.matrix_hash == train_hash(p.split, p.data.n_items()), "hash_mismatch",
            "basis in " + dir.string() + " was not built from the training split");
    return p;
}

/// Schedule stored with the trained model; explicitly given flags win.
ScheduleParams trained_schedule(const Options& o, const Manifest& manifest, const CLI::App& app) {
    auto p = schedule_params(o);
    if (!manifest.has("train")) return p;
    const auto& cfg = manifest.at("train").at("config");
    const auto flag_set = [&app](const char* name) { return app.get_option(name)->count() > 0; };
    if (!flag_set("--tau")) p.tau = cfg.at("tau").get<double>();
    if (!flag_set("--steps")) p.steps = cfg.at("steps").get<int>();
    if (!flag_set("--alpha-min")) p.alpha_min = cfg.at("alpha_min").get<double>();
    if (!flag_set("--sigma-max")) p.sigma_max = cfg.at("sigma_max").get<double>();
    if (!flag_set("--variant")) p.variant = parse_variant(cfg.at("variant").get<std::string>());
    if (!flag_set("--iso-sigma-end")) p.iso_sigma_end = cfg.at("iso_sigma_end").get<double>();
    return p;
}

Checkpoint load_model(const fs::path& dir, const SpectralBasis& basis) {
    auto ckpt = load_checkpoint(dir / "model.bin");
    require(ckpt.basis_hash == basis.matrix_hash && ckpt.params.shape.spectral_dim == basis.rank(), "hash_mismatch",
            "model in " + dir.string() + " was trained on a different basis");
    return ckpt;
}

std::vector<ItemIndex> merged(std::span<const ItemIndex> a, std::span<const ItemIndex> b) {
    std::vector<ItemIndex> out;
    out.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Ranked lists for every user with held-out items at `stage`. Test-time
/// conditions use train and validation interactions.
std::vector<std::vector<ItemIndex>> model_rankings(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                                   const SpectralBasis& basis, const DatasetSplit& split,
                                                   EvalStage stage, std::size_t top_n, double guidance,
                                                   std::size_t ensemble, std::uint64_t seed, std::size_t threads) {
    std::vector<std::vector<ItemIndex>> conditions(split.n_users());
    RankRequest request;
    for (std::size_t u = 0; u < split.n_users(); ++u) {
        const auto user = static_cast<UserIndex>(u);
        if (held_out_items(split, user, stage).empty()) continue;
        request.users.push_back(user);
        conditions[u] = stage == EvalStage::Test ? merged(split.train[u], split.val[u]) : split.train[u];
    }
    request.condition = [&conditions](UserIndex u) { return std::span<const ItemIndex>(conditions[u]); };
    request.excluded = [&split, stage](UserIndex u) { return excluded_items(split, u, stage); };
    request.top_n = top_n;

    const auto popularity = popularity_baseline(split, basis.n_items());
    SamplerConfig sc;
    sc.guidance = guidance;
    sc.ensemble = ensemble;
    sc.seed = seed;
    sc.fallback_scores = popularity;
    const auto lists = rank_users(params, schedule, basis, request, sc, threads);
    std::vector<std::vector<ItemIndex>> by_user(split.n_users());
    for (std::size_t j = 0; j < lists.size(); ++j) by_user[request.users[j]] = lists[j].items;
    return by_user;
}

Metrics score_rankings(const DatasetSplit& split, EvalStage stage, const std::vector<std::vector<ItemIndex>>& ranked,
                       std::span<const std::size_t> ks) {
    return evaluate(split, stage, [&ranked](UserIndex u) { return ranked[u]; }, ks);
}

Metrics popularity_metrics(const DatasetSplit& split, std::size_t n_items, EvalStage stage,
                           std::span<const std::size_t> ks) {
    const auto scores = popularity_baseline(split, n_items);
    const auto top_n = *std::max_element(ks.begin(), ks.end());
    return evaluate(split, stage,
                    [&](UserIndex u) { return recommend_topk(scores, excluded_items(split, u, stage), top_n); }, ks);
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

std::string mean_pm_std(const std::vector<double>& values) {
    const auto ms = mean_std(values);
    return fmt(ms.mean) + " ± " + fmt(ms.std);
}

void log_line(const Options& o, const std::string& line) {
    if (!o.quiet) std::cerr << line << '\n';
}

EpochCallback progress(const Options& o, const std::string& label) {
    return [&o, label](const EpochLog& e) {
        if (o.quiet) return;
        std::cerr << label << "epoch " << e.epoch << " loss " << fmt(e.loss, 6);
        if (e.val_recall) std::cerr << " val_recall@10 " << fmt(*e.val_recall) << " val_ndcg@10 " << fmt(*e.val_ndcg);
        std::cerr << '\n';
    };
}

// prepare ------------------------------------------------------------------

Prepared prepare_in_memory(const Options& o) {
    require(!o.data.empty(), "invalid_argument", "--data is required");
    LoadReport report;
    Prepared p;
    p.data = load_interactions(o.data, parse_format(o.format), &report);
    log_line(o, "loaded " + std::to_string(p.data.n_users()) + " users, " + std::to_string(p.data.n_items()) +
                    " items, " + std::to_string(p.data.n_interactions()) + " interactions (" +
                    std::to_string(report.duplicates) + " duplicates)");
    p.split = split_dataset(p.data, SplitRatios{}, o.seed);
    const auto train = train_matrix(p.data, p.split);
    LanczosOptions lo;
    lo.rank = o.k;
    lo.iterations = o.lanczos_iters;
    lo.tol = o.lanczos_tol;
    lo.seed = o.seed;
    LanczosReport lr;
    p.basis = build_spectral_basis(train, lo, &lr);
    log_line(o, "basis rank " + std::to_string(p.basis.rank()) + ", " + std::to_string(lr.restarts) + " restarts, " +
                    std::to_string(lr.matvecs) + " matvecs, max residual " + std::to_string(lr.max_residual));
    return p;
}

void save_prepared(const Options& o, const Prepared& p, Manifest& manifest, Staging& staging) {
    const fs::path dir = o.out;
    const auto split_dst = dir / "split.tsv";
    const auto basis_dst = dir / "basis.bin";
    const auto split_tmp = staging.stage(split_dst);
    const auto basis_tmp = staging.stage(basis_dst);
    write_split_manifest(split_tmp, p.split);
    save_basis(basis_tmp, p.basis);
    manifest.record("prepare", o,
                    json{{"data_hash", hex64(p.data.content_hash())},
                         {"train_hash", hex64(p.basis.matrix_hash)},
                         {"users", p.data.n_users()},
                         {"items", p.data.n_items()},
                         {"interactions", p.data.n_interactions()}},
                    json{{"split", artifact_entry(split_tmp, split_dst)}, {"basis", artifact_entry(basis_tmp, basis_dst)}},
                    staging);
}

int cmd_prepare(const Options& o) {
    fs::create_directories(o.out);
    Manifest manifest(o.out);
    Staging staging;
    const auto p = prepare_in_memory(o);
    save_prepared(o, p, manifest, staging);
    staging.commit();
    std::cout << "split: train " << p.split.count(SplitTag::Train) << ", val " << p.split.count(SplitTag::Val)
              << ", test " << p.split.count(SplitTag::Test) << "\n";
    return 0;
}

/// Reuses the prepared split and basis in --out when present, otherwise
/// prepares them there.
Prepared prepared_or_new(const Options& o, Manifest& manifest) {
    if (manifest.has("prepare")) return load_prepared(o, manifest);
    Staging staging;
    auto p = prepare_in_memory(o);
    save_prepared(o, p, manifest, staging);
    staging.commit();
    return p;
}

// train --------------------------------------------------------------------

int cmd_train(const Options& o) {
    Manifest manifest(o.out);
    const auto p = load_prepared(o, manifest);
    const auto schedule = build_schedule(p.basis, schedule_params(o));
    const auto cfg = train_config(o, p.basis.rank());

    auto result = train(cfg, p.split, p.basis, schedule, progress(o, ""));

    Staging staging;
    const fs::path dir = o.out;
    const auto model_dst = dir / "model.bin";
    const auto log_dst = dir / "train_log.csv";
    const auto model_tmp = staging.stage(model_dst);
    const auto log_tmp = staging.stage(log_dst);
    save_checkpoint(model_tmp, Checkpoint{result.params, p.basis.matrix_hash, result.steps, result.adam});
    write_train_log(log_tmp, result.log);
    manifest.record("train", o,
                    json{{"data_hash", hex64(p.data.content_hash())},
                         {"basis_hash", hex64(p.basis.matrix_hash)},
                         {"status", result.status},
                         {"best_epoch", result.best_epoch},
                         {"best_val_recall@10", result.best_val_recall},
                         {"steps", result.steps},
                         {"parameters", parameter_count(cfg.shape)}},
                    json{{"model", artifact_entry(model_tmp, model_dst)}, {"log", artifact_entry(log_tmp, log_dst)}},
                    staging);
    staging.commit();
    std::cout << "status " << result.status << ", best epoch " << result.best_epoch << ", val recall@10 "
              << fmt(std::max(result.best_val_recall, 0.0)) << "\n";
    if (result.status == "non_finite_loss") {
        throw Error("non_finite_loss", "training diverged; the last good checkpoint was written");
    }
    return 0;
}

// recommend ----------------------------------------------------------------

std::vector<std::string> read_user_list(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "io_error", "cannot read " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        ids.push_back(line.substr(first, last - first + 1));
    }
    return ids;
}

struct RecommendArgs {
    std::vector<std::string> users;
    std::string users_file;
    std::string output;
};

int cmd_recommend(const Options& o, const RecommendArgs& args, const CLI::App& app) {
    Manifest manifest(o.out);
    const auto p = load_prepared(o, manifest);
    const auto ckpt = load_model(o.out, p.basis);
    const auto schedule = build_schedule(p.basis, trained_schedule(o, manifest, app));
    const auto top_n = *std::max_element(o.topk.begin(), o.topk.end());

    std::vector<std::string> ids = args.users;
    if (!args.users_file.empty()) {
        const auto more = read_user_list(args.users_file);
        ids.insert(ids.end(), more.begin(), more.end());
    }
    RankRequest request;
    if (ids.empty()) {
        for (std::size_t u = 0; u < p.data.n_users(); ++u) request.users.push_back(static_cast<UserIndex>(u));
    }
    for (const auto& id : ids) {
        const auto u = p.data.find_user(id);
        require(u.has_value(), "unknown_user", "user '" + id + "' does not occur in the data");
        request.users.push_back(*u);
    }
    request.condition = [&p](UserIndex u) { return p.data.row(u); };
    request.excluded = [&p](UserIndex u) {
        const auto r = p.data.row(u);
        return std::vector<ItemIndex>(r.begin(), r.end());
    };
    request.top_n = top_n;

    const auto popularity = popularity_baseline(p.split, p.basis.n_items());
    SamplerConfig sc;
    sc.guidance = o.guidance;
    sc.ensemble = o.ensemble;
    sc.seed = o.seed;
    sc.fallback_scores = popularity;
    const auto lists = rank_users(ckpt.params, schedule, p.basis, request, sc, o.threads);

    const fs::path dst = args.output.empty() ? fs::path(o.out) / "recommendations.tsv" : fs::path(args.output);
    Staging staging;
    const auto tmp = staging.stage(dst);
    {
        auto out = open_out(tmp);
        out << "user_id\titem_id\trank\tscore\n" << std::setprecision(9);
        for (std::size_t j = 0; j < lists.size(); ++j) {
            const auto& uid = p.data.user_id(request.users[j]);
            for (std::size_t r = 0; r < lists[j].items.size(); ++r) {
                out << uid << '\t' << p.data.item_id(lists[j].items[r]) << '\t' << r + 1 << '\t' << lists[j].scores[r]
                    << '\n';
            }
        }
        require(static_cast<bool>(out), "io_error", "write failed: " + dst.string());
    }
    manifest.record("recommend", o,
                    json{{"data_hash", hex64(p.data.content_hash())},
                         {"model", hex64(file_hash(fs::path(o.out) / "model.bin"))},
                         {"users", lists.size()}},
                    json{{"recommendations", artifact_entry(tmp, dst)}}, staging);
    staging.commit();
    log_line(o, "wrote " + dst.string());
    return 0;
}

// evaluate -----------------------------------------------------------------

struct EvaluateArgs {
    std::size_t runs = 1;
    std::string stage = "test";
};

EvalStage parse_stage(const std::string& s) {
    if (s == "test") return EvalStage::Test;
    if (s == "val") return EvalStage::Validation;
    throw Error("invalid_argument", "unknown stage '" + s + "' (expected test or val)");
}

void metrics_rows(std::ostream& out, const std::string& method, std::size_t run, std::uint64_t seed,
                  const Metrics& m) {
    for (const auto k : m.ks) {
        out << method << ',' << run << ',' << seed << ',' << k << ',' << m.recall.at(k) << ',' << m.ndcg.at(k) << ','
            << m.user_count() << '\n';
    }
}

int cmd_evaluate(const Options& o, const EvaluateArgs& args, const CLI::App& app) {
    require(args.runs >= 1, "invalid_argument", "--runs must be positive");
    Manifest manifest(o.out);
    const auto p = load_prepared(o, manifest);
    const auto ckpt = load_model(o.out, p.basis);
    const auto schedule = build_schedule(p.basis, trained_schedule(o, manifest, app));
    const auto stage = parse_stage(args.stage);
    const auto top_n = *std::max_element(o.topk.begin(), o.topk.end());

    std::map<std::size_t, std::vector<double>> recall, ndcg;
    std::ostringstream csv;
    csv << std::setprecision(9) << "method,run,seed,k,recall,ndcg,users\n";
    for (std::size_t r = 0; r < args.runs; ++r) {
        const auto seed = o.seed + r;
        const auto ranked = model_rankings(ckpt.params, schedule, p.basis, p.split, stage, top_n, o.guidance,
                                           o.ensemble, seed, o.threads);
        const auto m = score_rankings(p.split, stage, ranked, o.topk);
        metrics_rows(csv, "s-diff", r, seed, m);
        for (const auto k : o.topk) {
            recall[k].push_back(m.recall.at(k));
            ndcg[k].push_back(m.ndcg.at(k));
        }
    }
    const auto pop = popularity_metrics(p.split, p.data.n_items(), stage, o.topk);
    metrics_rows(csv, "popularity", 0, 0, pop);

    std::cout << "method       ";
    for (const auto k : o.topk) std::cout << " recall@" << k << "          ndcg@" << k << "         ";
    std::cout << "\ns-diff       ";
    for (const auto k : o.topk) std::cout << ' ' << mean_pm_std(recall[k]) << "  " << mean_pm_std(ndcg[k]);
    std::cout << "\npopularity   ";
    for (const auto k : o.topk) std::cout << ' ' << fmt(pop.recall.at(k)) << "           " << fmt(pop.ndcg.at(k)) << "          ";
    std::cout << "\n";

    Staging staging;
    const auto dst = fs::path(o.out) / ("metrics_" + args.stage + ".csv");
    const auto tmp = staging.stage(dst);
    write_text(tmp, csv.str());
    manifest.record("evaluate", o,
                    json{{"data_hash", hex64(p.data.content_hash())},
                         {"model", hex64(file_hash(fs::path(o.out) / "model.bin"))},
                         {"stage", args.stage},
                         {"runs", args.runs}},
                    json{{"metrics", artifact_entry(tmp, dst)}}, staging);
    staging.commit();
    return 0;
}

// snr ----------------------------------------------------------------------

struct SnrArgs {
    std::vector<std::string> variants;
    std::size_t frequencies = 101;
    double d_max = 2.0;
    std::size_t time_points = 101;
    std::string basis;
    std::string output;
};

int cmd_snr(const Options& o, const SnrArgs& args) {
    require(args.time_points >= 2, "invalid_argument", "--time-points must be at least 2");
    Eigen::VectorXd d;
    if (!args.basis.empty()) {
        d = load_basis(args.basis).d;
    } else {
        require(args.frequencies >= 2, "invalid_argument", "--frequencies must be at least 2");
        d = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(args.frequencies), 0.0, args.d_max);
    }
    const auto variants = args.variants.empty() ? std::vector<std::string>{o.variant} : args.variants;

    std::ostringstream csv;
    csv << std::setprecision(12) << "variant,t,frequency_index,d,alpha,sigma,snr,bound\n";
    for (const auto& name : variants) {
        auto params = schedule_params(o);
        params.variant = parse_variant(name);
        const NoiseSchedule schedule(d, params);
        const auto bound = schedule.snr_lower_bound();
        for (std::size_t j = 0; j < args.time_points; ++j) {
            const double t = j + 1 == args.time_points ? params.tau
                                                       : params.tau * static_cast<double>(j) /
                                                             static_cast<double>(args.time_points - 1);
            const auto c = schedule.at(t);
            const auto s = snr(schedule, t);
            for (Eigen::Index i = 0; i < d.size(); ++i) {
                csv << variant_name(params.variant) << ',' << t << ',' << i << ',' << d[i] << ',' << c.alpha[i] << ','
                    << c.sigma[i] << ',' << s.values[i] << ',' << bound << '\n';
            }
        }
    }
    if (args.output.empty() || args.output == "-") {
        std::cout << csv.str();
    } else {
        Staging staging;
        write_text(staging.stage(args.output), csv.str());
        staging.commit();
    }
    return 0;
}

// ablate -------------------------------------------------------------------

struct AblateArgs {
    std::size_t runs = 3;
    std::vector<std::string> variants{"vp", "ve", "iso"};
};

struct RunScore {
    std::map<std::size_t, double> recall, ndcg;
};

RunScore train_and_test(const Options& o, const Prepared& p, const ScheduleParams& sp, std::uint64_t seed,
                        const std::string& label) {
    const auto schedule = build_schedule(p.basis, sp);
    auto cfg = train_config(o, p.basis.rank());
    cfg.seed = seed;
    const auto result = train(cfg, p.split, p.basis, schedule, progress(o, label));
    const auto top_n = *std::max_element(o.topk.begin(), o.topk.end());
    const auto ranked = model_rankings(result.params, schedule, p.basis, p.split, EvalStage::Test, top_n, o.guidance,
                                       o.ensemble, seed, o.threads);
    const auto m = score_rankings(p.split, EvalStage::Test, ranked, o.topk);
    log_line(o, label + "status " + result.status + ", best epoch " + std::to_string(result.best_epoch) +
                    ", test recall@10 " + fmt(m.recall.count(10) ? m.recall.at(10) : m.recall.begin()->second));
    return RunScore{m.recall, m.ndcg};
}

int cmd_ablate(const Options& o, const AblateArgs& args) {
    require(args.runs >= 1, "invalid_argument", "--runs must be positive");
    fs::create_directories(o.out);
    Manifest manifest(o.out);
    const auto p = prepared_or_new(o, manifest);

    std::ostringstream csv;
    csv << std::setprecision(9) << "variant,run,seed,k,recall,ndcg\n";
    std::vector<std::pair<std::string, std::vector<RunScore>>> table;
    for (const auto& name : args.variants) {
        auto sp = schedule_params(o);
        sp.variant = parse_variant(name);
        std::vector<RunScore> scores;
        for (std::size_t r = 0; r < args.runs; ++r) {
            const auto seed = o.seed + r;
            scores.push_back(train_and_test(o, p, sp, seed, std::string(variant_name(sp.variant)) + " seed " +
                                                                 std::to_string(seed) + ": "));
            for (const auto k : o.topk) {
                csv << variant_name(sp.variant) << ',' << r << ',' << seed << ',' << k << ','
                    << scores.back().recall.at(k) << ',' << scores.back().ndcg.at(k) << '\n';
            }
        }
        table.emplace_back(std::string(variant_name(sp.variant)), std::move(scores));
    }
    const auto pop = popularity_metrics(p.split, p.data.n_items(), EvalStage::Test, o.topk);
    for (const auto k : o.topk) csv << "popularity,0,0," << k << ',' << pop.recall.at(k) << ',' << pop.ndcg.at(k) << '\n';

    std::cout << "variant    ";
    for (const auto k : o.topk) std::cout << "  recall@" << k << "         ndcg@" << k << "         ";
    std::cout << '\n';
    for (const auto& [name, scores] : table) {
        std::cout << std::left << std::setw(10) << name << std::right;
        for (const auto k : o.topk) {
            std::vector<double> r, n;
            for (const auto& s : scores) {
                r.push_back(s.recall.at(k));
                n.push_back(s.ndcg.at(k));
            }
            std::cout << "  " << mean_pm_std(r) << "  " << mean_pm_std(n);
        }
        std::cout << '\n';
    }
    std::cout << "popularity";
    for (const auto k : o.topk) std::cout << "  " << fmt(pop.recall.at(k)) << "           " << fmt(pop.ndcg.at(k)) << "          ";
    std::cout << '\n';

    Staging staging;
    const auto dst = fs::path(o.out) / "ablation.csv";
    const auto tmp = staging.stage(dst);
    write_text(tmp, csv.str());
    manifest.record("ablate", o, json{{"data_hash", hex64(p.data.content_hash())}, {"runs", args.runs}},
                    json{{"ablation", artifact_entry(tmp, dst)}}, staging);
    staging.commit();
    return 0;
}

// sweep --------------------------------------------------------------------

struct SweepArgs {
    std::string grid = "alpha-sigma";
    std::vector<double> alpha_values{0.01, 0.05, 0.1, 0.2};
    std::vector<double> sigma_values{0.1, 0.3, 0.45, 0.6};
    std::vector<std::size_t> k_values{50, 100, 200};
};

SpectralBasis leading_columns(const SpectralBasis& b, std::size_t k) {
    SpectralBasis out = b;
    const auto kk = static_cast<Eigen::Index>(k);
    out.U = b.U.leftCols(kk);
    out.d = b.d.head(kk);
    out.residuals = b.residuals.head(kk);
    return out;
}

int cmd_sweep(const Options& o, const SweepArgs& args) {
    fs::create_directories(o.out);
    Manifest manifest(o.out);
    std::ostringstream csv;
    csv << std::setprecision(9) << "alpha_min,sigma_max,k,recall@10,ndcg@10,recall@20,ndcg@20\n";
    const auto row = [&csv](double a, double s, std::size_t k, const RunScore& r) {
        const auto get = [](const std::map<std::size_t, double>& m, std::size_t key) {
            const auto it = m.find(key);
            return it == m.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
        };
        csv << a << ',' << s << ',' << k << ',' << get(r.recall, 10) << ',' << get(r.ndcg, 10) << ','
            << get(r.recall, 20) << ',' << get(r.ndcg, 20) << '\n';
        std::cout << "alpha_min " << a << " sigma_max " << s << " k " << k << ": recall@10 " << fmt(get(r.recall, 10))
                  << " ndcg@10 " << fmt(get(r.ndcg, 10)) << '\n';
    };

    std::string data_hash;
    if (args.grid == "alpha-sigma") {
        const auto p = prepared_or_new(o, manifest);
        data_hash = hex64(p.data.content_hash());
        for (const auto a : args.alpha_values) {
            for (const auto s : args.sigma_values) {
                auto sp = schedule_params(o);
                sp.alpha_min = a;
                sp.sigma_max = s;
                row(a, s, p.basis.rank(), train_and_test(o, p, sp, o.seed, ""));
            }
        }
    } else if (args.grid == "k") {
        require(!args.k_values.empty(), "invalid_argument", "--k-values is empty");
        auto opts = o;
        opts.k = *std::max_element(args.k_values.begin(), args.k_values.end());
        auto p = manifest.has("prepare") && manifest.at("prepare").at("config").at("k").get<std::size_t>() >= opts.k
                     ? load_prepared(o, manifest)
                     : prepare_in_memory(opts);
        data_hash = hex64(p.data.content_hash());
        const auto full = p.basis;
        for (const auto k : args.k_values) {
            p.basis = leading_columns(full, k);
            row(o.alpha_min, o.sigma_max, k, train_and_test(o, p, schedule_params(o), o.seed, ""));
        }
    } else {
        throw Error("invalid_argument", "unknown grid '" + args.grid + "' (expected alpha-sigma or k)");
    }

    Staging staging;
    const auto dst = fs::path(o.out) / ("sweep_" + args.grid + ".csv");
    const auto tmp = staging.stage(dst);
    write_text(tmp, csv.str());
    manifest.record("sweep", o, json{{"data_hash", data_hash}, {"grid", args.grid}},
                    json{{"sweep", artifact_entry(tmp, dst)}}, staging);
    staging.commit();
    return 0;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral-domain diffusion recommender"};
    app.set_config("--config", "", "Key-value config file; command-line flags win");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.fallthrough();
    app.require_subcommand(1);

    Options o;
    app.add_option("--data", o.data, "Interaction file (user item [rating [timestamp]])");
    app.add_option("--format", o.format, "auto, tsv or csv")->check(CLI::IsMember({"auto", "tsv", "csv"}));
    app.add_option("--k", o.k, "Spectral basis rank")->capture_default_str();
    app.add_option("--lanczos-iters", o.lanczos_iters, "Lanczos restart budget")->capture_default_str();
    app.add_option("--lanczos-tol", o.lanczos_tol, "Eigenpair residual tolerance")->capture_default_str();
    app.add_option("--tau", o.tau, "Diffusion horizon")->capture_default_str();
    app.add_option("--steps", o.steps, "Reverse steps T")->capture_default_str();
    app.add_option("--alpha-min", o.alpha_min, "Signal floor of the VP schedule")->capture_default_str();
    app.add_option("--sigma-max", o.sigma_max, "Noise cap")->capture_default_str();
    app.add_option("--variant", o.variant, "Schedule: vp, ve or iso")->capture_default_str();
    app.add_option("--iso-sigma-end", o.iso_sigma_end, "Isotropic noise level at t = tau")->capture_default_str();
    app.add_option("--guidance-s", o.guidance, "Unconditional blend weight")->capture_default_str();
    app.add_option("--ensemble", o.ensemble, "Reverse runs averaged per user")->capture_default_str();
    app.add_option("--p-uncond", o.p_uncond, "Condition dropout probability")->capture_default_str();
    app.add_option("--p-mask", o.p_mask, "Condition masking probability")->capture_default_str();
    app.add_option("--dropout", o.dropout, "Condition dropout granularity: example or batch")
        ->check(CLI::IsMember({"example", "batch"}))
        ->capture_default_str();
    app.add_option("--batch-size", o.batch_size)->capture_default_str();
    app.add_option("--lr", o.lr)->capture_default_str();
    app.add_option("--epochs", o.epochs, "Maximum training epochs")->capture_default_str();
    app.add_option("--patience", o.patience, "Early-stopping patience in evaluations")->capture_default_str();
    app.add_option("--eval-every", o.eval_every, "Epochs between validation runs")->capture_default_str();
    app.add_option("--hidden", o.hidden, "Denoiser trunk width")->capture_default_str();
    app.add_option("--time-dim", o.time_dim, "Time embedding size")->capture_default_str();
    app.add_option("--film-width", o.film_width, "FiLM hidden width")->capture_default_str();
    app.add_option("--topk", o.topk, "Cutoffs, e.g. 10,20")->delimiter(',')->capture_default_str();
    app.add_option("--seed", o.seed)->capture_default_str();
    app.add_option("--threads", o.threads)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--out", o.out, "Run directory")->capture_default_str();
    app.add_flag("--deterministic", o.deterministic, "Single-threaded, no wall-clock fields in outputs");
    app.add_flag("-q,--quiet", o.quiet, "No progress output");

    auto* prepare = app.add_subcommand("prepare", "Split the data and build the spectral basis");
    auto* train_cmd = app.add_subcommand("train", "Train the denoiser on a prepared run directory");

    RecommendArgs rec;
    auto* recommend = app.add_subcommand("recommend", "Write top-K recommendations");
    recommend->add_option("--user", rec.users, "User ID (repeatable)");
    recommend->add_option("--users", rec.users_file, "File with one user ID per line");
    recommend->add_option("--output", rec.output, "Output file (default: <out>/recommendations.tsv)");

    EvaluateArgs ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Recall@K and NDCG@K of the trained model");
    evaluate_cmd->add_option("--runs", ev.runs, "Sampling seeds to average over")->capture_default_str();
    evaluate_cmd->add_option("--stage", ev.stage, "test or val")->capture_default_str();

    SnrArgs sn;
    auto* snr_cmd = app.add_subcommand("snr", "Emit schedule coefficients and SNR as CSV");
    snr_cmd->add_option("--variant", sn.variants, "Schedule variant (repeatable)");
    snr_cmd->add_option("--frequencies", sn.frequencies, "Evenly spaced frequencies in [0, d-max]")
        ->capture_default_str();
    snr_cmd->add_option("--d-max", sn.d_max, "Largest frequency")->capture_default_str();
    snr_cmd->add_option("--time-points", sn.time_points, "Points on [0, tau]")->capture_default_str();
    snr_cmd->add_option("--basis", sn.basis, "Take frequencies from a basis file instead");
    snr_cmd->add_option("--output", sn.output, "Output file (default: stdout)");

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate", "Train and test the vp, ve and iso variants");
    ablate->add_option("--runs", ab.runs, "Training seeds per variant")->capture_default_str();
    ablate->add_option("--variants", ab.variants, "Variants to compare")->delimiter(',')->capture_default_str();

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "Grid over (alpha_min, sigma_max) or over K");
    sweep->add_option("--grid", sw.grid, "alpha-sigma or k")->capture_default_str();
    sweep->add_option("--alpha-values", sw.alpha_values)->delimiter(',')->capture_default_str();
    sweep->add_option("--sigma-values", sw.sigma_values)->delimiter(',')->capture_default_str();
    sweep->add_option("--k-values", sw.k_values)->delimiter(',')->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (o.deterministic) o.threads = 1;
        require(!o.topk.empty(), "invalid_argument", "--topk is empty");
        if (*prepare) return cmd_prepare(o);
        if (*train_cmd) return cmd_train(o);
        if (*recommend) return cmd_recommend(o, rec, app);
        if (*evaluate_cmd) return cmd_evaluate(o, ev, app);
        if (*snr_cmd) return cmd_snr(o, sn);
        if (*ablate) return cmd_ablate(o, ab);
        if (*sweep) return cmd_sweep(o, sw);
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}
