#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "biounet/trainer.hpp"

namespace biounet::records {

/// Shortest round-tripping decimal form; "nan", "inf" and "-inf" for
/// non-finite values.
std::string format_number(double value);

/// RFC 4180 quoting when the field needs it.
std::string csv_field(const std::string& text);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const noexcept { return header_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Per-epoch metrics as flat records: attribute, epoch, losses, step counts,
/// validation loss, per-head AUC and accuracy, selection metric, best flag.
CsvTable epochs_table(const std::vector<pipeline::EpochRecord>& epochs, const std::vector<std::string>& heads);
CsvTable steps_table(const std::vector<pipeline::StepRecord>& steps);

/// Creates parent directories; throws IoError on failure.
void write_text(const std::string& path, const std::string& content);
void write_json(const std::string& path, const nlohmann::json& value);
nlohmann::json read_json(const std::string& path);

}  // namespace biounet::records
