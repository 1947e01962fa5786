#include "biounet/records.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biounet/errors.hpp"
#include "biounet/hash.hpp"

namespace biounet {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

namespace records {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw ContractError("csv row has the wrong number of fields");
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_field(fields[i]);
    os << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return os.str();
}

CsvTable epochs_table(const std::vector<pipeline::EpochRecord>& epochs, const std::vector<std::string>& heads) {
  std::vector<std::string> header{"attribute", "epoch",    "clr_loss",  "cls_loss",         "seg_loss", "clr_steps",
                                  "cls_steps", "seg_steps", "val_loss", "selection_metric", "best",     "e3_hash"};
  for (const auto& h : heads) {
    header.push_back("val_auc_" + h);
    header.push_back("val_accuracy_" + h);
  }
  CsvTable t(header);
  for (const auto& e : epochs) {
    std::vector<std::string> row{std::to_string(e.attribute),
                                 std::to_string(e.epoch),
                                 format_number(e.clr_loss),
                                 format_number(e.cls_loss),
                                 format_number(e.seg_loss),
                                 std::to_string(e.clr_steps),
                                 std::to_string(e.cls_steps),
                                 std::to_string(e.seg_steps),
                                 format_number(e.val_loss),
                                 format_number(e.selection_metric),
                                 e.best ? "1" : "0",
                                 hex64(e.e3_hash)};
    for (std::size_t k = 0; k < heads.size(); ++k) {
      const bool have = k < e.val_auc.size();
      row.push_back(have && e.val_auc[k] ? format_number(*e.val_auc[k]) : "");
      row.push_back(k < e.val_accuracy.size() ? format_number(e.val_accuracy[k]) : "");
    }
    t.add_row(std::move(row));
  }
  return t;
}

CsvTable steps_table(const std::vector<pipeline::StepRecord>& steps) {
  CsvTable t({"attribute", "epoch", "kind", "index", "repeat", "batch", "loss", "changed", "e3_hash", "note"});
  for (const auto& s : steps) {
    std::string changed;
    for (auto g : s.changed) changed += (changed.empty() ? "" : "|") + std::string(nn::group_name(g));
    t.add_row({std::to_string(s.attribute), std::to_string(s.epoch), pipeline::to_string(s.kind),
               std::to_string(s.index), std::to_string(s.repeat), std::to_string(s.batch), format_number(s.loss),
               changed, hex64(s.e3_hash), s.note});
  }
  return t;
}

void write_text(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create directory for " + path + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

void write_json(const std::string& path, const nlohmann::json& value) { write_text(path, value.dump(2) + "\n"); }

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace records
}  // namespace biounet
