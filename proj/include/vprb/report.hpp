#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vprb/retrieval.hpp"

namespace vprb {

enum class ReportFormat { kCsv, kMarkdown };
enum class TauUnit { kMeters, kCentimeters };

ReportFormat parse_report_format(std::string_view name);
TauUnit parse_tau_unit(std::string_view name);
std::string_view to_string(TauUnit unit);

inline constexpr std::string_view kReportHeader =
    "method,backbone,loss,tau,fcm_percent,n_queries,config_hash,seed";

struct ReportRow {
  std::string method;
  std::string backbone;
  std::string loss;
  std::vector<double> fcm;  // aligned with ReportTable::taus; ignored when failed
  bool failed = false;
  std::size_t n_queries = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// One results table: rows are methods, columns are thresholds.
struct ReportTable {
  std::string title;
  std::vector<double> taus;  // meters
  TauUnit unit = TauUnit::kMeters;
  std::vector<ReportRow> rows;
  std::vector<std::string> notes;
};

ReportRow to_row(const MatchReport& report);
ReportTable to_table(const MatchReport& report, TauUnit unit = TauUnit::kMeters);

/// CSV is long form (one line per row and threshold) under kReportHeader;
/// Markdown is wide (one column per threshold). No thresholds gives a
/// header-only table.
std::string emit_report(const ReportTable& table, ReportFormat format);
std::string emit_report(const MatchReport& report, ReportFormat format,
                        TauUnit unit = TauUnit::kMeters);

/// Markdown sections with FCM differences between losses (per pooling) and
/// between GeM and NetVLAD (per loss). Untrained and failed rows are skipped.
std::string emit_deltas(const ReportTable& table);

/// Inverse of the CSV form; rows and thresholds keep first-appearance order.
ReportTable parse_report_csv(std::string_view text);

}  // namespace vprb
