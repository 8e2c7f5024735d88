#include "mmp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "mmp/errors.hpp"
#include "mmp/evaluation.hpp"
#include "mmp/nmf.hpp"
#include "mmp/rank_selection.hpp"
#include "mmp/synth.hpp"
#include "text_io.hpp"

namespace mmp {
namespace fs = std::filesystem;

namespace {

struct IngestArtifacts {
    DiseaseVocabulary vocabulary;
    std::vector<EventRecord> events;
    std::vector<PatientMeta> patients;
};

IngestArtifacts read_ingest(const PipelineConfig& config, const RunLayout& run)
{
    const auto dir = run.ingest_dir();
    IngestArtifacts a;
    a.vocabulary = load_vocabulary(dir / "vocabulary.txt");
    auto events = load_events(dir / "events.csv", a.vocabulary, config.ingest.max_age);
    if (events.rejects.rejected > 0) throw DataError("ingest output contains rejected rows: " + dir.string());
    a.events = std::move(events.records);
    a.patients = load_meta(dir / "meta.csv").patients;
    return a;
}

void write_json(const fs::path& path, const nlohmann::json& j)
{
    auto out = detail::open_output(path);
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path)
{
    auto in = detail::open_input(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

std::string relative(const RunLayout& run, const fs::path& path) { return path.lexically_relative(run.root).generic_string(); }

DesignOptions design_options(const PipelineConfig& config, double sigma)
{
    return {.ages = static_cast<std::size_t>(config.ingest.max_age),
            .sigma = sigma,
            .truncate = config.matrix.truncate,
            .boundary = config.matrix.boundary,
            .apply_ipf = config.matrix.apply_ipf};
}

NmfConfig nmf_config(const PipelineConfig& config, std::size_t rank)
{
    return {.rank = rank,
            .max_iters = config.nmf.max_iters,
            .tol = config.nmf.tol,
            .window = config.nmf.window,
            .epsilon = config.nmf.epsilon,
            .seed = config.nmf.seed};
}

// Lowest final divergence; ties keep the earlier seed.
FactorModel best_restart(const SparseMatrix& data, const NmfConfig& nmf, std::size_t restarts, nlohmann::json& details)
{
    auto batch = multi_restart(data, nmf, restarts);
    if (batch.models.empty())
        throw NumericalError("all " + std::to_string(restarts) + " restarts failed: " + batch.failures.front().message);
    std::size_t best = 0;
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < batch.models.size(); ++i) {
        const auto& m = batch.models[i];
        runs.push_back({{"seed", m.seed}, {"final_divergence", m.final_divergence()}, {"iterations", m.iterations}});
        if (m.final_divergence() < batch.models[best].final_divergence()) best = i;
    }
    for (const auto& f : batch.failures) runs.push_back({{"seed", f.seed}, {"error", f.message}});
    details["restarts"] = runs;
    details["selected_seed"] = batch.models[best].seed;
    return std::move(batch.models[best]);
}

Eigen::MatrixXd read_pair_matrix_tsv(const fs::path& path)
{
    auto in = detail::open_input(path);
    std::string line;
    std::getline(in, line);
    const auto q = detail::split(line, '\t').size() - 1;
    Eigen::MatrixXd m(q, q);
    for (std::size_t r = 0; r < q; ++r) {
        if (!std::getline(in, line)) throw DataError("truncated pair matrix: " + path.string());
        const auto fields = detail::split(line, '\t');
        if (fields.size() != q + 1) throw DataError("malformed pair matrix row in " + path.string());
        for (std::size_t c = 0; c < q; ++c) {
            if (fields[c + 1] == "NA") {
                m(r, c) = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            const auto v = detail::parse_number<double>(fields[c + 1]);
            if (!v) throw DataError("malformed value in " + path.string());
            m(r, c) = *v;
        }
    }
    return m;
}

std::size_t single_rank(const PipelineConfig& config)
{
    if (config.nmf.ranks.size() != 1)
        throw ConfigError("nmf.ranks lists several ranks; use the rank scan or pick one rank");
    return config.nmf.ranks.front();
}

void check_L(const PipelineConfig& config, std::size_t codes)
{
    for (auto L : config.evaluation.L_list)
        if (L > codes)
            throw ConfigError("evaluation.L_list entry " + std::to_string(L) + " exceeds the " + std::to_string(codes) +
                              " codes");
}

std::string format_optional(const std::optional<double>& v)
{
    if (!v) return "NA";
    std::ostringstream s;
    s.precision(17);
    s << *v;
    return s.str();
}

std::string safe_name(const std::string& stratum)
{
    std::string out;
    for (char c : stratum) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? "unnamed" : out;
}

} // namespace

nlohmann::json StageRecord::to_json() const
{
    nlohmann::json j = {{"name", name}, {"status", status}, {"outputs", outputs}, {"details", details}};
    if (!error.empty()) j["error"] = error;
    return j;
}

StageRecord stage_ingest(const PipelineConfig& config, const RunLayout& run, const std::string& stratum)
{
    if (config.paths.events.empty() || config.paths.meta.empty() || config.paths.vocabulary.empty())
        throw ConfigError("paths.events, paths.meta and paths.vocabulary are required");
    const auto vocabulary = load_vocabulary(config.paths.vocabulary);
    const auto events = load_events(config.paths.events, vocabulary, config.ingest.max_age);
    auto meta = load_meta(config.paths.meta);

    const std::set<std::string> allowed(config.ingest.strata.begin(), config.ingest.strata.end());
    std::erase_if(meta.patients, [&](const PatientMeta& p) {
        return (!allowed.empty() && !allowed.contains(p.strata)) || (!stratum.empty() && p.strata != stratum);
    });

    const auto included = apply_inclusion(events.records, meta.patients,
                                          {.min_followup = config.ingest.min_followup,
                                           .washout = config.ingest.washout,
                                           .washout_mode = config.ingest.washout_mode});
    if (included.patients.empty()) log_warning("no patients left after inclusion");

    const auto dir = run.ingest_dir();
    write_vocabulary(dir / "vocabulary.txt", vocabulary);
    write_events(dir / "events.csv", included.events);
    write_meta(dir / "meta.csv", included.patients);
    write_json(dir / "rejects.json", {{"events", events.rejects.to_json()}, {"meta", meta.rejects.to_json()}});
    write_json(dir / "inclusion.json", included.summary.to_json());

    StageRecord r{.name = "ingest"};
    for (const char* f : {"vocabulary.txt", "events.csv", "meta.csv", "rejects.json", "inclusion.json"})
        r.outputs.push_back(relative(run, dir / f));
    r.details = {{"patients", included.patients.size()}, {"events", included.events.size()}, {"codes", vocabulary.size()}};
    if (!stratum.empty()) r.details["stratum"] = stratum;
    return r;
}

StageRecord stage_matrix(const PipelineConfig& config, const RunLayout& run)
{
    const auto in = read_ingest(config, run);
    std::vector<std::string> ids;
    ids.reserve(in.patients.size());
    for (const auto& p : in.patients) ids.push_back(p.patient_id);
    const auto design =
        build_design_matrix(ids, in.events, in.vocabulary.size(), design_options(config, config.matrix.sigma));
    if (design.values.nnz() == 0) throw DataError("design matrix is empty; nothing to factorize");
    write_concatenated(design, run.matrix_stem());

    StageRecord r{.name = "matrix"};
    r.outputs = {relative(run, fs::path(run.matrix_stem()) += ".bin"), relative(run, fs::path(run.matrix_stem()) += ".json")};
    r.details = {{"rows", design.values.rows()}, {"cols", design.values.cols()}, {"nnz", design.values.nnz()}};
    return r;
}

StageRecord stage_factorize(const PipelineConfig& config, const RunLayout& run)
{
    const auto rank = single_rank(config);
    const auto design = read_concatenated(run.matrix_stem());
    const auto vocabulary = load_vocabulary(run.ingest_dir() / "vocabulary.txt");
    if (vocabulary.size() != design.codes) throw DataError("vocabulary does not match the design matrix");

    StageRecord r{.name = "factorize"};
    const auto model = best_restart(design.values, nmf_config(config, rank), config.nmf.restarts, r.details);
    write_model(model, run.model_dir(), vocabulary.codes());
    for (const char* f : {"manifest.json", "A.bin", "B.bin", "B.tsv"}) r.outputs.push_back(relative(run, run.model_dir() / f));
    r.details["rank"] = rank;
    r.details["final_divergence"] = model.final_divergence();
    r.details["iterations"] = model.iterations;
    return r;
}

StageRecord stage_rank_scan(const PipelineConfig& config, const RunLayout& run)
{
    const auto design = read_concatenated(run.matrix_stem());
    const auto scores = rank_scan(design.values, config.nmf.ranks, config.rank_selection.n_runs, nmf_config(config, 1));
    write_rank_scan_tsv(run.rank_scan_tsv(), scores);

    StageRecord r{.name = "rank_scan"};
    r.outputs = {relative(run, run.rank_scan_tsv())};
    nlohmann::json per_rank = nlohmann::json::array();
    for (const auto& s : scores)
        per_rank.push_back({{"Q", s.rank},
                            {"seed", rank_seed(config.nmf.seed, s.rank)},
                            {"cophenetic", s.cophenetic},
                            {"successful_runs", s.successful_runs},
                            {"failed_runs", s.failed_runs}});
    r.details = {{"n_runs", config.rank_selection.n_runs}, {"ranks", per_rank}};
    return r;
}

StageRecord stage_pairwise(const PipelineConfig& config, const RunLayout& run)
{
    const auto model = read_model(run.model_dir());
    const auto sidecar = read_json(fs::path(run.matrix_stem()) += ".json");
    const auto ages = sidecar.at("T").get<std::size_t>();
    const auto stats = pairwise_statistics(model, ages,
                                           {.fraction = config.ascendancy.binarize_fraction,
                                            .aggregation = config.ascendancy.aggregation,
                                            .scope = config.ascendancy.binarize_scope,
                                            .alpha = config.ascendancy.alpha});
    const auto dir = run.ascendancy_dir();
    write_pair_matrix_tsv(dir / "kappa.tsv", stats.kappa);
    write_pair_matrix_tsv(dir / "tau.tsv", stats.tau);
    write_pair_matrix_tsv(dir / "contributors.tsv", stats.contributors.cast<double>());

    StageRecord r{.name = "pairwise"};
    for (const char* f : {"kappa.tsv", "tau.tsv", "contributors.tsv"}) r.outputs.push_back(relative(run, dir / f));
    r.details = {{"thresholds", stats.thresholds}};
    return r;
}

StageRecord stage_network(const PipelineConfig& config, const RunLayout& run)
{
    const auto dir = run.ascendancy_dir();
    PairwiseStatistics stats;
    stats.kappa = read_pair_matrix_tsv(dir / "kappa.tsv");
    stats.tau = read_pair_matrix_tsv(dir / "tau.tsv");
    stats.contributors = read_pair_matrix_tsv(dir / "contributors.tsv").cast<int>();
    stats.valid = stats.kappa.array().isFinite() && stats.tau.array().isFinite();

    const auto model = normalized_for_reporting(read_model(run.model_dir()));
    if (static_cast<Eigen::Index>(model.rank) != stats.kappa.rows())
        throw DataError("pairwise statistics do not match the model rank");
    const auto vocabulary = load_vocabulary(run.ingest_dir() / "vocabulary.txt");
    const auto network = build_network(stats, model.B, vocabulary.codes(), config.ascendancy.top_k_edges,
                                       std::min(config.ascendancy.top_diseases, vocabulary.size()));
    write_json(dir / "network.json", network_to_json(network));
    auto dot = detail::open_output(dir / "network.dot");
    dot << network_to_dot(network);

    StageRecord r{.name = "network"};
    r.outputs = {relative(run, dir / "network.json"), relative(run, dir / "network.dot")};
    r.details = {{"edges", network.edges.size()}, {"kappa_threshold", network.kappa_threshold}};
    return r;
}

StageRecord stage_c_score(const PipelineConfig& config, const RunLayout& run)
{
    StageRecord r{.name = "c_score"};
    if (config.paths.comorbid_lookup.empty()) {
        r.status = "skipped";
        r.details = {{"reason", "no comorbid lookup configured"}};
        return r;
    }
    const auto vocabulary = load_vocabulary(run.ingest_dir() / "vocabulary.txt");
    check_L(config, vocabulary.size());
    const auto lookup = load_lookup(config.paths.comorbid_lookup, vocabulary, LookupKind::comorbid);
    const auto model = read_model(run.model_dir());
    nlohmann::json results = nlohmann::json::array();
    for (auto L : config.evaluation.L_list)
        results.push_back(
            evaluate_c_score(model.B, lookup, L, config.evaluation.n_perms, config.evaluation.seed).to_json());
    const auto path = run.evaluation_dir() / "c_score.json";
    write_json(path, results);
    r.outputs = {relative(run, path)};
    r.details = {{"lookup_pairs", lookup.pairs.size()}, {"lookup_rejects", lookup.rejects.to_json()}};
    return r;
}

StageRecord stage_a_score(const PipelineConfig& config, const RunLayout& run)
{
    StageRecord r{.name = "a_score"};
    if (config.paths.causal_lookup.empty()) {
        r.status = "skipped";
        r.details = {{"reason", "no causal lookup configured"}};
        return r;
    }
    const auto vocabulary = load_vocabulary(run.ingest_dir() / "vocabulary.txt");
    check_L(config, vocabulary.size());
    const auto lookup = load_lookup(config.paths.causal_lookup, vocabulary, LookupKind::causal);
    const auto model = read_model(run.model_dir());
    const auto network = network_from_json(read_json(run.ascendancy_dir() / "network.json"));
    nlohmann::json results = nlohmann::json::array();
    for (auto L : config.evaluation.L_list)
        results.push_back(evaluate_a_score(network.edges, model.B, lookup, L, config.evaluation.n_perms,
                                           config.evaluation.seed)
                              .to_json());
    const auto path = run.evaluation_dir() / "a_score.json";
    write_json(path, results);
    r.outputs = {relative(run, path)};
    r.details = {{"lookup_pairs", lookup.pairs.size()}, {"lookup_rejects", lookup.rejects.to_json()}};
    return r;
}

void record_stage(const PipelineConfig& config, const RunLayout& run, const StageRecord& record)
{
    nlohmann::json manifest = nlohmann::json::object();
    if (fs::exists(run.manifest())) manifest = read_json(run.manifest());
    manifest["config"] = config_to_json(config);
    auto& stages = manifest["stages"];
    if (!stages.is_array()) stages = nlohmann::json::array();
    bool replaced = false;
    for (auto& s : stages)
        if (s.at("name") == record.name) {
            s = record.to_json();
            replaced = true;
        }
    if (!replaced) stages.push_back(record.to_json());
    bool complete = true;
    for (const auto& s : stages) complete = complete && s.at("status") != "failed";
    manifest["complete"] = complete;
    write_json(run.manifest(), manifest);
}

StageRecord run_stage(const std::string& name, const PipelineConfig& config, const RunLayout& run,
                      const std::function<StageRecord()>& stage)
{
    log_info("stage " + name + " (" + run.root.string() + ")");
    auto fail = [&](const std::exception& e) {
        StageRecord r{.name = name, .status = "failed"};
        r.error = e.what();
        record_stage(config, run, r);
        return "stage " + name + " failed: " + e.what();
    };
    try {
        auto record = stage();
        record_stage(config, run, record);
        return record;
    } catch (const ConfigError& e) {
        throw ConfigError(fail(e));
    } catch (const DataError& e) {
        throw DataError(fail(e));
    } catch (const NumericalError& e) {
        throw NumericalError(fail(e));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(fail(e));
    } catch (const std::exception& e) {
        throw std::runtime_error(fail(e));
    }
}

namespace {

void run_one(const PipelineConfig& config, const RunLayout& run, const std::string& stratum)
{
    fs::remove(run.manifest());
    run_stage("ingest", config, run, [&] { return stage_ingest(config, run, stratum); });
    run_stage("matrix", config, run, [&] { return stage_matrix(config, run); });
    if (config.nmf.ranks.size() > 1) {
        run_stage("rank_scan", config, run, [&] { return stage_rank_scan(config, run); });
        return;
    }
    run_stage("factorize", config, run, [&] { return stage_factorize(config, run); });
    run_stage("pairwise", config, run, [&] { return stage_pairwise(config, run); });
    run_stage("network", config, run, [&] { return stage_network(config, run); });
    run_stage("c_score", config, run, [&] { return stage_c_score(config, run); });
    run_stage("a_score", config, run, [&] { return stage_a_score(config, run); });
}

} // namespace

fs::path run_pipeline(const PipelineConfig& config)
{
    validate(config);
    const fs::path root = config.paths.output_dir;
    if (!config.ingest.stratify) {
        run_one(config, RunLayout{root}, {});
        return root;
    }

    std::set<std::string> strata;
    for (const auto& p : load_meta(config.paths.meta).patients)
        if (config.ingest.strata.empty() ||
            std::find(config.ingest.strata.begin(), config.ingest.strata.end(), p.strata) != config.ingest.strata.end())
            strata.insert(p.strata);
    if (strata.empty()) throw DataError("no strata to analyse");

    nlohmann::json runs = nlohmann::json::array();
    for (const auto& s : strata) {
        const auto dir = "stratum_" + safe_name(s);
        runs.push_back({{"stratum", s}, {"dir", dir}});
        run_one(config, RunLayout{root / dir}, s);
    }
    write_json(root / "manifest.json", {{"config", config_to_json(config)}, {"strata", runs}});
    return root;
}

std::vector<GridCell> grid_search(const PipelineConfig& config, const RunLayout& run)
{
    validate(config);
    if (config.paths.comorbid_lookup.empty()) throw ConfigError("grid search needs paths.comorbid_lookup");
    if (!fs::exists(run.ingest_dir() / "events.csv"))
        run_stage("ingest", config, run, [&] { return stage_ingest(config, run); });

    const auto in = read_ingest(config, run);
    check_L(config, in.vocabulary.size());
    const auto lookup = load_lookup(config.paths.comorbid_lookup, in.vocabulary, LookupKind::comorbid);
    std::vector<std::string> ids;
    for (const auto& p : in.patients) ids.push_back(p.patient_id);

    const auto sigmas = config.matrix.sigma_list.empty() ? std::vector<double>{config.matrix.sigma} : config.matrix.sigma_list;
    std::vector<GridCell> cells;
    for (double sigma : sigmas) {
        std::optional<ConcatenatedMatrix> design;
        std::string matrix_error;
        try {
            design = build_design_matrix(ids, in.events, in.vocabulary.size(), design_options(config, sigma));
        } catch (const std::exception& e) {
            matrix_error = e.what();
        }
        for (auto rank : config.nmf.ranks) {
            std::optional<FactorModel> model;
            std::string error = matrix_error;
            if (design) {
                try {
                    nlohmann::json details;
                    model = best_restart(design->values, nmf_config(config, rank), config.nmf.restarts, details);
                } catch (const std::exception& e) {
                    error = e.what();
                }
            }
            for (auto L : config.evaluation.L_list) {
                GridCell cell{.sigma = sigma, .rank = rank, .L = L};
                if (model) {
                    const auto m = evaluate_c_score(model->B, lookup, L, config.evaluation.n_perms, config.evaluation.seed);
                    cell.a = m.a;
                    cell.b = m.b;
                    cell.score = m.score;
                    cell.p_value = m.p_value;
                } else {
                    cell.status = "failed";
                    log_warning("grid cell sigma=" + format_optional(sigma) + " Q=" + std::to_string(rank) +
                                " failed: " + error);
                }
                cells.push_back(cell);
            }
        }
    }

    for (auto L : config.evaluation.L_list) {
        GridCell* best = nullptr;
        for (auto& c : cells)
            if (c.L == L && c.score && (!best || *c.score > *best->score)) best = &c;
        if (best) best->best = true;
    }

    auto out = detail::open_output(run.root / "grid_search.tsv");
    out << "sigma\tQ\tL\ta\tb\tC_L\tp_value\tstatus\tbest\n";
    for (const auto& c : cells)
        out << format_optional(c.sigma) << '\t' << c.rank << '\t' << c.L << '\t' << c.a << '\t' << c.b << '\t'
            << format_optional(c.score) << '\t' << format_optional(c.p_value) << '\t' << c.status << '\t'
            << (c.best ? "*" : "") << '\n';
    return cells;
}

void simulate(const PipelineConfig& config, const fs::path& dir)
{
    validate(config);
    const auto& s = config.simulate;
    auto model = disjoint_planted_model(s.rank, s.codes, s.ages, s.noise_rate, s.peak_rate);
    model.scale_log_sigma = s.scale_log_sigma;
    const auto cohort = generate_cohort(model, s.patients, s.seed);
    write_cohort(cohort, dir);

    const auto pairs = planted_pairs(model, std::min(s.lookup_L, s.codes / s.rank));
    write_lookup(dir / "comorbid_lookup.csv", make_lookup(LookupKind::comorbid, pairs, s.codes), cohort.vocabulary);

    PipelineConfig run = config;
    const auto abs = fs::absolute(dir);
    run.paths.events = (abs / "events.csv").string();
    run.paths.meta = (abs / "meta.csv").string();
    run.paths.vocabulary = (abs / "vocabulary.txt").string();
    run.paths.comorbid_lookup = (abs / "comorbid_lookup.csv").string();
    run.paths.output_dir = (abs / "run").string();
    run.ingest.max_age = static_cast<int>(s.ages);
    run.nmf.ranks = {s.rank};
    save_config(run, dir / "config.ini");
    log_info("wrote synthetic cohort with " + std::to_string(cohort.events.size()) + " events to " + dir.string());
}

} // namespace mmp
