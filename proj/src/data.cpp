#include "shadow_att/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "shadow_att/errors.hpp"

namespace shadow_att {

Eigen::VectorXd Observation::features() const {
    Eigen::VectorXd x(u.size() + z.size());
    x << u, z;
    return x;
}

Dataset::Dataset(std::vector<Observation> rows, std::vector<std::string> u_names,
                 std::vector<std::string> z_names)
    : rows_(std::move(rows)), u_names_(std::move(u_names)), z_names_(std::move(z_names)) {
    if (rows_.empty()) throw DataError("dataset must contain at least one observation");
    const auto p = static_cast<Eigen::Index>(u_names_.size());
    const auto q = static_cast<Eigen::Index>(z_names_.size());
    features_.resize(static_cast<Eigen::Index>(rows_.size()), p + q);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto& r = rows_[i];
        if (r.t != 0 && r.t != 1) throw NonBinaryValue(i + 1, "t");
        if (r.y != 0 && r.y != 1) throw NonBinaryValue(i + 1, "y");
        if (r.u.size() != p) throw DimensionMismatch(p, r.u.size(), "u at row " + std::to_string(i + 1));
        if (r.z.size() != q) throw DimensionMismatch(q, r.z.size(), "z at row " + std::to_string(i + 1));
        features_.row(static_cast<Eigen::Index>(i)) << r.u.transpose(), r.z.transpose();
        treated_ += static_cast<std::size_t>(r.t);
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    std::vector<Observation> rows;
    rows.reserve(indices.size());
    for (auto i : indices) rows.push_back(rows_.at(i));
    return Dataset(std::move(rows), u_names_, z_names_);
}

std::string ValidationReport::shadow_support_label() const {
    return shadow_support ? std::to_string(*shadow_support) : std::string("continuous");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

int parse_binary(std::string_view cell, std::size_t row, const std::string& column) {
    cell = trim(cell);
    if (cell.empty()) throw ParseError(row, column, "missing value");
    long v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) throw ParseError(row, column);
    if (v != 0 && v != 1) throw NonBinaryValue(row, column);
    return static_cast<int>(v);
}

double parse_real(std::string_view cell, std::size_t row, const std::string& column) {
    cell = trim(cell);
    if (cell.empty()) throw ParseError(row, column, "missing value");
    if (cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw ParseError(row, column);
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column_index(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MissingColumn(name);
        return static_cast<std::size_t>(it - header.begin());
    }
};

CsvTable read_table(std::istream& in) {
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV: header row required");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    for (auto& h : split_line(line)) table.header.emplace_back(trim(h));
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        table.rows.push_back(split_line(line));
    }
    return table;
}

Dataset build_dataset(const CsvTable& table, const ColumnMapping& m) {
    const std::size_t t_col = table.column_index(m.t);
    const std::size_t y_col = table.column_index(m.y);
    std::vector<std::size_t> u_cols, z_cols;
    for (const auto& c : m.u) u_cols.push_back(table.column_index(c));
    for (const auto& c : m.z) z_cols.push_back(table.column_index(c));

    std::vector<Observation> obs;
    obs.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& cells = table.rows[r];
        const std::size_t row = r + 1;
        if (cells.size() != table.header.size())
            throw ParseError(row, "*", "expected " + std::to_string(table.header.size()) +
                                           " cells, found " + std::to_string(cells.size()));
        Observation o;
        o.t = parse_binary(cells[t_col], row, m.t);
        o.y = parse_binary(cells[y_col], row, m.y);
        o.u.resize(static_cast<Eigen::Index>(u_cols.size()));
        for (std::size_t j = 0; j < u_cols.size(); ++j)
            o.u[static_cast<Eigen::Index>(j)] = parse_real(cells[u_cols[j]], row, m.u[j]);
        o.z.resize(static_cast<Eigen::Index>(z_cols.size()));
        for (std::size_t j = 0; j < z_cols.size(); ++j)
            o.z[static_cast<Eigen::Index>(j)] = parse_real(cells[z_cols[j]], row, m.z[j]);
        obs.push_back(std::move(o));
    }
    if (obs.empty()) throw DataError("CSV has a header but no data rows");
    return Dataset(std::move(obs), m.u, m.z);
}

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return in;
}

std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::size_t distinct_count(const Eigen::Ref<const Eigen::VectorXd>& col, std::size_t cap) {
    std::set<double> seen;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
        seen.insert(col[i]);
        if (seen.size() > cap) break;
    }
    return seen.size();
}

}  // namespace

Dataset load_dataset(const std::string& path, const ColumnMapping& mapping) {
    auto in = open_or_throw(path);
    return build_dataset(read_table(in), mapping);
}

Dataset parse_dataset(const std::string& csv_text, const ColumnMapping& mapping) {
    std::istringstream in(csv_text);
    return build_dataset(read_table(in), mapping);
}

std::vector<double> load_column(const std::string& path, const std::string& column) {
    auto in = open_or_throw(path);
    const auto table = read_table(in);
    const auto idx = table.column_index(column);
    std::vector<double> values;
    values.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (idx >= table.rows[r].size()) throw ParseError(r + 1, column, "missing value");
        values.push_back(parse_real(table.rows[r][idx], r + 1, column));
    }
    return values;
}

std::string format_dataset(const Dataset& ds) {
    std::ostringstream out;
    out << "t,y";
    for (const auto& n : ds.u_names()) out << ',' << n;
    for (const auto& n : ds.z_names()) out << ',' << n;
    out << '\n';
    for (const auto& o : ds.rows()) {
        out << o.t << ',' << o.y;
        for (Eigen::Index j = 0; j < o.u.size(); ++j) out << ',' << shortest(o.u[j]);
        for (Eigen::Index j = 0; j < o.z.size(); ++j) out << ',' << shortest(o.z[j]);
        out << '\n';
    }
    return out.str();
}

void write_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << format_dataset(ds);
}

ValidationReport validate(const Dataset& ds) {
    ValidationReport rep;
    rep.n_treated = ds.treated_count();
    rep.n_control = ds.control_count();
    if (rep.n_treated == 0 || rep.n_control == 0) rep.warnings.emplace_back("single treatment arm");
    for (auto [count, arm] : {std::pair{rep.n_treated, "treated"}, std::pair{rep.n_control, "control"}})
        if (count > 0 && count < kSmallArm)
            rep.warnings.push_back(std::string(arm) + " arm has only " + std::to_string(count) + " rows");

    std::set<int> ys;
    for (const auto& o : ds.rows()) ys.insert(o.y);
    rep.outcome_support = ys.size();
    if (rep.outcome_support < 2) rep.warnings.emplace_back("outcome takes a single value");

    const auto& x = ds.features();
    const auto p = static_cast<Eigen::Index>(ds.p());
    bool continuous = false;
    std::size_t m = 1;
    for (std::size_t j = 0; j < ds.q(); ++j) {
        const auto levels =
            distinct_count(x.col(p + static_cast<Eigen::Index>(j)), kContinuousLevelThreshold);
        if (levels > kContinuousLevelThreshold) {
            continuous = true;
        } else {
            m *= levels;
        }
    }
    if (ds.q() == 0) {
        rep.warnings.emplace_back("no shadow variables: the propensity is not identified");
        rep.shadow_support = 1;
        rep.completeness_heuristic_pass = false;
        return rep;
    }
    if (continuous) {
        rep.shadow_support.reset();
        rep.completeness_heuristic_pass = true;
    } else {
        rep.shadow_support = m;
        rep.completeness_heuristic_pass = rep.outcome_support <= m;
    }
    if (!rep.completeness_heuristic_pass)
        rep.warnings.emplace_back("shadow support smaller than outcome support (l > m)");
    return rep;
}

Dataset standardize(const Dataset& ds) {
    const auto& x = ds.features();
    const Eigen::Index cols = x.cols();
    const auto n = static_cast<double>(ds.n());
    Eigen::VectorXd center = Eigen::VectorXd::Zero(cols);
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        if (distinct_count(x.col(j), kContinuousLevelThreshold) <= kContinuousLevelThreshold) continue;
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().sum() / std::max(n - 1.0, 1.0);
        if (var <= 0.0) continue;
        center[j] = mean;
        scale[j] = std::sqrt(var);
    }
    const auto p = static_cast<Eigen::Index>(ds.p());
    std::vector<Observation> rows = ds.rows();
    for (auto& o : rows) {
        o.u = (o.u - center.head(p)).cwiseQuotient(scale.head(p));
        o.z = (o.z - center.tail(cols - p)).cwiseQuotient(scale.tail(cols - p));
    }
    return Dataset(std::move(rows), ds.u_names(), ds.z_names());
}

}  // namespace shadow_att
