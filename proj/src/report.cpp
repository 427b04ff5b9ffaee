#include "vprb/report.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>

#include <fmt/format.h>

namespace vprb {

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  throw InvalidInput(fmt::format("unknown report format '{}'", name));
}

TauUnit parse_tau_unit(std::string_view name) {
  if (name == "m") return TauUnit::kMeters;
  if (name == "cm") return TauUnit::kCentimeters;
  throw InvalidInput(fmt::format("unknown threshold unit '{}' (expected m or cm)", name));
}

std::string_view to_string(TauUnit unit) { return unit == TauUnit::kMeters ? "m" : "cm"; }

ReportRow to_row(const MatchReport& r) {
  return {r.method, r.backbone, r.loss, r.fcm, false, r.n_queries, r.config_hash, r.seed};
}

ReportTable to_table(const MatchReport& r, TauUnit unit) {
  ReportTable t;
  t.title = fmt::format("{} vs {}", r.test_name, r.reference_name);
  t.taus = r.taus;
  t.unit = unit;
  t.rows.push_back(to_row(r));
  t.notes.push_back(fmt::format("matching: {} (top-{} kept for diagnostics)", r.matching, r.top_n));
  return t;
}

namespace {

std::string tau_label(double tau_m, TauUnit unit) {
  const double v = unit == TauUnit::kMeters ? tau_m : tau_m * 100.0;
  return fmt::format("τ={:g} {}", v, to_string(unit));
}

std::string hash_text(std::uint64_t h) { return fmt::format("{:016x}", h); }

std::string emit_csv(const ReportTable& t) {
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < t.taus.size(); ++i) {
      const std::string fcm = row.failed ? "FAILED" : fmt::format("{}", row.fcm.at(i));
      out += fmt::format("{},{},{},{},{},{},{},{}\n", row.method, row.backbone, row.loss,
                         t.taus[i], fcm, row.n_queries, hash_text(row.config_hash), row.seed);
    }
  }
  return out;
}

std::string markdown_header(const std::vector<std::string>& lead, const ReportTable& t,
                            const std::vector<std::string>& tail) {
  std::vector<std::string> cols = lead;
  for (double tau : t.taus) cols.push_back(tau_label(tau, t.unit));
  cols.insert(cols.end(), tail.begin(), tail.end());
  std::string out = "|";
  std::string rule = "|";
  for (const auto& c : cols) {
    out += fmt::format(" {} |", c);
    rule += "---|";
  }
  return out + "\n" + rule + "\n";
}

std::string emit_markdown(const ReportTable& t) {
  std::string out;
  if (!t.title.empty()) out += fmt::format("## {}\n\n", t.title);
  out += markdown_header({"method", "backbone", "loss"}, t, {"n_queries", "config_hash", "seed"});
  if (!t.taus.empty()) {
    for (const auto& row : t.rows) {
      out += fmt::format("| {} | {} | {} |", row.method, row.backbone, row.loss);
      for (std::size_t i = 0; i < t.taus.size(); ++i) {
        out += row.failed ? " FAILED |" : fmt::format(" {:.1f} |", row.fcm.at(i));
      }
      out += fmt::format(" {} | {} | {} |\n", row.n_queries, hash_text(row.config_hash), row.seed);
    }
  }
  if (!t.notes.empty()) {
    out += '\n';
    for (const auto& n : t.notes) out += fmt::format("- {}\n", n);
  }
  return out;
}

const ReportRow* find_row(const ReportTable& t, std::string_view method, std::string_view loss) {
  for (const auto& r : t.rows) {
    if (r.method == method && r.loss == loss && !r.failed) return &r;
  }
  return nullptr;
}

std::string delta_cells(const ReportRow& a, const ReportRow& b, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += fmt::format(" {:+.1f} |", a.fcm[i] - b.fcm[i]);
  return out;
}

}  // namespace

std::string emit_report(const ReportTable& table, ReportFormat format) {
  for (const auto& row : table.rows) {
    if (!row.failed && row.fcm.size() != table.taus.size()) {
      throw DimensionError(fmt::format("report row {}/{} has {} values for {} thresholds",
                                       row.method, row.loss, row.fcm.size(), table.taus.size()));
    }
  }
  return format == ReportFormat::kCsv ? emit_csv(table) : emit_markdown(table);
}

std::string emit_report(const MatchReport& report, ReportFormat format, TauUnit unit) {
  return emit_report(to_table(report, unit), format);
}

std::string emit_deltas(const ReportTable& t) {
  static constexpr std::pair<std::string_view, std::string_view> kLossPairs[] = {
      {"arcface", "triplet"}, {"arcface", "contrastive"}, {"triplet", "contrastive"}};
  std::vector<std::string> methods;
  std::vector<std::string> losses;
  for (const auto& r : t.rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
    if (std::find(losses.begin(), losses.end(), r.loss) == losses.end()) losses.push_back(r.loss);
  }

  std::string out = "### Loss deltas (FCM points)\n\n";
  out += markdown_header({"method", "comparison"}, t, {});
  for (const auto& m : methods) {
    for (const auto& [a, b] : kLossPairs) {
      const ReportRow* ra = find_row(t, m, a);
      const ReportRow* rb = find_row(t, m, b);
      if (ra == nullptr || rb == nullptr) continue;
      out += fmt::format("| {} | {} - {} |{}\n", m, a, b, delta_cells(*ra, *rb, t.taus.size()));
    }
  }
  out += "\n### Pooling deltas (FCM points)\n\n";
  out += markdown_header({"loss", "comparison"}, t, {});
  for (const auto& l : losses) {
    const ReportRow* gem = find_row(t, "gem", l);
    const ReportRow* vlad = find_row(t, "netvlad", l);
    if (gem == nullptr || vlad == nullptr) continue;
    out += fmt::format("| {} | gem - netvlad |{}\n", l, delta_cells(*gem, *vlad, t.taus.size()));
  }
  return out;
}

namespace {

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_field(const std::string& text, std::size_t line_no, std::string_view column,
              int base = 10) {
  T value{};
  const char* end = text.data() + text.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    r = std::from_chars(text.data(), end, value);
  } else {
    r = std::from_chars(text.data(), end, value, base);
  }
  if (r.ec != std::errc() || r.ptr != end) {
    throw ParseError(fmt::format("report line {}: bad {} '{}'", line_no, column, text));
  }
  return value;
}

}  // namespace

ReportTable parse_report_csv(std::string_view text) {
  ReportTable t;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> row_of;
  std::vector<std::map<double, double>> values;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (line != kReportHeader) throw ParseError("report: unexpected CSV header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 8) {
      throw ParseError(fmt::format("report line {}: expected 8 columns, got {}", line_no, f.size()));
    }
    const double tau = parse_field<double>(f[3], line_no, "tau");
    if (std::find(t.taus.begin(), t.taus.end(), tau) == t.taus.end()) t.taus.push_back(tau);
    const std::string key = fmt::format("{}\x1f{}\x1f{}\x1f{}\x1f{}", f[0], f[1], f[2], f[6], f[7]);
    auto [it, fresh] = row_of.emplace(key, t.rows.size());
    if (fresh) {
      ReportRow row;
      row.method = f[0];
      row.backbone = f[1];
      row.loss = f[2];
      row.n_queries = parse_field<std::size_t>(f[5], line_no, "n_queries");
      row.config_hash = parse_field<std::uint64_t>(f[6], line_no, "config_hash", 16);
      row.seed = parse_field<std::uint64_t>(f[7], line_no, "seed");
      t.rows.push_back(row);
      values.emplace_back();
    }
    if (f[4] == "FAILED") {
      t.rows[it->second].failed = true;
    } else {
      values[it->second][tau] = parse_field<double>(f[4], line_no, "fcm_percent");
    }
  }
  if (line_no == 0) throw ParseError("report: empty input");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r].failed) continue;
    for (double tau : t.taus) {
      const auto it = values[r].find(tau);
      if (it == values[r].end()) {
        throw ParseError(fmt::format("report: row {}/{} has no value at tau {}", t.rows[r].method,
                                     t.rows[r].loss, tau));
      }
      t.rows[r].fcm.push_back(it->second);
    }
  }
  return t;
}

}  // namespace vprb
