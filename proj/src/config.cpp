#include "mmp/config.hpp"

#include <charconv>
#include <cmath>
#include <concepts>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mmp/errors.hpp"
#include "text_io.hpp"

namespace mmp {
namespace {

// Shortest representation that parses back to the same double.
std::string encode(double v)
{
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}
std::string encode(bool v) { return v ? "true" : "false"; }
template <std::integral T>
std::string encode(T v)
{
    return std::to_string(v);
}
std::string encode(const std::string& v) { return v; }
std::string encode(WashoutMode v) { return to_string(v); }
std::string encode(Boundary v) { return to_string(v); }
std::string encode(Aggregation v) { return to_string(v); }
std::string encode(BinarizeScope v) { return to_string(v); }

template <class T>
std::string encode(const std::vector<T>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += encode(values[i]);
    }
    return out;
}

template <class T>
T decode_number(std::string_view text)
{
    const auto v = detail::parse_number<T>(detail::trim(text));
    if (!v) throw std::invalid_argument("not a number");
    return *v;
}

template <class T>
void decode(std::string_view text, T& out)
{
    if constexpr (std::is_same_v<T, bool>) {
        const auto t = detail::trim(text);
        if (t == "true" || t == "1" || t == "yes") out = true;
        else if (t == "false" || t == "0" || t == "no") out = false;
        else throw std::invalid_argument("expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
        out = std::string(detail::trim(text));
    } else if constexpr (std::is_same_v<T, WashoutMode>) {
        out = parse_washout_mode(detail::trim(text));
    } else if constexpr (std::is_same_v<T, Boundary>) {
        out = parse_boundary(detail::trim(text));
    } else if constexpr (std::is_same_v<T, Aggregation>) {
        out = parse_aggregation(detail::trim(text));
    } else if constexpr (std::is_same_v<T, BinarizeScope>) {
        out = parse_binarize_scope(detail::trim(text));
    } else {
        out = decode_number<T>(text);
    }
}

template <class T>
void decode(std::string_view text, std::vector<T>& out)
{
    out.clear();
    if (detail::trim(text).empty()) return;
    for (auto item : detail::split(text, ',')) {
        T v{};
        decode(item, v);
        out.push_back(std::move(v));
    }
}

struct Field {
    std::string key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, std::string_view)> set;
};

template <class Access>
Field field(std::string key, Access access)
{
    return {std::move(key),
            [access](const PipelineConfig& c) { return encode(access(const_cast<PipelineConfig&>(c))); },
            [access](PipelineConfig& c, std::string_view v) { decode(v, access(c)); }};
}

#define MMP_FIELD(section, name) field(#section "." #name, [](PipelineConfig& c) -> auto& { return c.section.name; })

const std::vector<Field>& fields()
{
    static const std::vector<Field> all{
        MMP_FIELD(paths, events),
        MMP_FIELD(paths, meta),
        MMP_FIELD(paths, vocabulary),
        MMP_FIELD(paths, comorbid_lookup),
        MMP_FIELD(paths, causal_lookup),
        MMP_FIELD(paths, output_dir),
        MMP_FIELD(ingest, max_age),
        MMP_FIELD(ingest, min_followup),
        MMP_FIELD(ingest, washout),
        MMP_FIELD(ingest, washout_mode),
        MMP_FIELD(ingest, stratify),
        MMP_FIELD(ingest, strata),
        MMP_FIELD(matrix, sigma),
        MMP_FIELD(matrix, sigma_list),
        MMP_FIELD(matrix, truncate),
        MMP_FIELD(matrix, boundary),
        MMP_FIELD(matrix, apply_ipf),
        MMP_FIELD(nmf, ranks),
        MMP_FIELD(nmf, max_iters),
        MMP_FIELD(nmf, tol),
        MMP_FIELD(nmf, window),
        MMP_FIELD(nmf, epsilon),
        MMP_FIELD(nmf, seed),
        MMP_FIELD(nmf, restarts),
        MMP_FIELD(rank_selection, n_runs),
        MMP_FIELD(ascendancy, binarize_fraction),
        MMP_FIELD(ascendancy, aggregation),
        MMP_FIELD(ascendancy, binarize_scope),
        MMP_FIELD(ascendancy, alpha),
        MMP_FIELD(ascendancy, top_k_edges),
        MMP_FIELD(ascendancy, top_diseases),
        MMP_FIELD(evaluation, L_list),
        MMP_FIELD(evaluation, n_perms),
        MMP_FIELD(evaluation, seed),
        MMP_FIELD(simulate, rank),
        MMP_FIELD(simulate, codes),
        MMP_FIELD(simulate, ages),
        MMP_FIELD(simulate, patients),
        MMP_FIELD(simulate, noise_rate),
        MMP_FIELD(simulate, peak_rate),
        MMP_FIELD(simulate, scale_log_sigma),
        MMP_FIELD(simulate, seed),
        MMP_FIELD(simulate, lookup_L),
        MMP_FIELD(run, threads),
    };
    return all;
}

#undef MMP_FIELD

const Field& find_field(std::string_view key)
{
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError("unknown config key: " + std::string(key));
}

void require(bool ok, const std::string& message)
{
    if (!ok) throw ConfigError(message);
}

} // namespace

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

std::string get_config_value(const PipelineConfig& config, std::string_view key) { return find_field(key).get(config); }

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value)
{
    const auto& f = find_field(key);
    try {
        f.set(config, value);
    } catch (const std::exception& e) {
        throw ConfigError("invalid value '" + std::string(value) + "' for " + f.key + ": " + e.what());
    }
}

void validate(const PipelineConfig& c)
{
    require(c.ingest.max_age >= 1, "ingest.max_age must be >= 1");
    require(c.ingest.min_followup >= 0, "ingest.min_followup must be >= 0");
    require(c.ingest.washout >= 0, "ingest.washout must be >= 0");
    require(c.matrix.sigma >= 0.0 && std::isfinite(c.matrix.sigma), "matrix.sigma must be >= 0");
    for (double s : c.matrix.sigma_list) require(s >= 0.0 && std::isfinite(s), "matrix.sigma_list entries must be >= 0");
    require(c.matrix.truncate > 0.0, "matrix.truncate must be > 0");
    require(!c.nmf.ranks.empty(), "nmf.ranks must not be empty");
    for (auto q : c.nmf.ranks) require(q >= 1, "nmf.ranks entries must be >= 1");
    require(c.nmf.max_iters >= 1, "nmf.max_iters must be >= 1");
    require(c.nmf.tol >= 0.0, "nmf.tol must be >= 0");
    require(c.nmf.window >= 1, "nmf.window must be >= 1");
    require(c.nmf.epsilon > 0.0, "nmf.epsilon must be > 0");
    require(c.nmf.restarts >= 1, "nmf.restarts must be >= 1");
    require(c.rank_selection.n_runs >= 2, "rank_selection.n_runs must be >= 2");
    require(c.ascendancy.binarize_fraction > 0.0 && c.ascendancy.binarize_fraction <= 1.0,
            "ascendancy.binarize_fraction must be in (0, 1]");
    require(c.ascendancy.alpha >= 0.0, "ascendancy.alpha must be >= 0");
    require(c.ascendancy.top_diseases >= 1, "ascendancy.top_diseases must be >= 1");
    require(!c.evaluation.L_list.empty(), "evaluation.L_list must not be empty");
    for (auto L : c.evaluation.L_list) require(L >= 1, "evaluation.L_list entries must be >= 1");
    require(c.evaluation.n_perms >= 1, "evaluation.n_perms must be >= 1");
    require(c.simulate.rank >= 1 && c.simulate.codes >= c.simulate.rank, "simulate.codes must be >= simulate.rank >= 1");
    require(c.simulate.ages >= 2, "simulate.ages must be >= 2");
    require(c.simulate.noise_rate >= 0.0 && c.simulate.noise_rate <= 1.0, "simulate.noise_rate must be in [0, 1]");
    require(c.simulate.peak_rate >= 0.0 && c.simulate.peak_rate <= 1.0, "simulate.peak_rate must be in [0, 1]");
    require(c.simulate.scale_log_sigma >= 0.0, "simulate.scale_log_sigma must be >= 0");
    require(c.simulate.lookup_L >= 2, "simulate.lookup_L must be >= 2");
    require(c.run.threads >= 0, "run.threads must be >= 0");
}

PipelineConfig parse_config(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    PipelineConfig config;
    for (const auto& [section, entries] : tree) {
        if (entries.empty()) throw ConfigError("config entry outside a section: " + section);
        for (const auto& [key, value] : entries) set_config_value(config, section + "." + key, value.data());
    }
    return config;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string format_config(const PipelineConfig& config)
{
    std::ostringstream out;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const auto s = f.key.substr(0, dot);
        if (s != section) {
            if (!section.empty()) out << '\n';
            out << '[' << s << "]\n";
            section = s;
        }
        out << f.key.substr(dot + 1) << " = " << f.get(config) << '\n';
    }
    return out.str();
}

void save_config(const PipelineConfig& config, const std::filesystem::path& path)
{
    auto out = detail::open_output(path);
    out << format_config(config);
}

nlohmann::json config_to_json(const PipelineConfig& config)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : fields()) j[f.key] = f.get(config);
    return j;
}

} // namespace mmp
