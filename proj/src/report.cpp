// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "svdseg/train.hpp"

namespace svdseg {

namespace fs = std::filesystem;

nlohmann::json dice_result_to_json(const DiceResult& r) {
  nlohmann::json per_sample = nlohmann::json::array();
  for (const SampleScore& s : r.per_sample) {
    per_sample.push_back({{"sample_id", s.sample_id},
                          {"label", s.label},
                          {"dsc", s.dsc},
                          {"gt_blank", s.gt_blank},
                          {"pred_fg_fraction", s.pred_fg_fraction}});
  }
  return nlohmann::json{{"per_class", r.per_class},
                        {"average", r.average},
                        {"per_class_blank_dsc", r.per_class_blank_dsc},
                        {"blank_dsc_average", r.blank_dsc_average},
                        {"blank_fg_fraction", r.blank_fg_fraction},
                        {"blank_cases", r.blank_cases},
                        {"per_sample", std::move(per_sample)}};
}

DiceResult dice_result_from_json(const nlohmann::json& j) {
  DiceResult r;
  r.per_class = j.at("per_class").get<std::map<std::string, double>>();
  r.average = j.at("average").get<double>();
  r.per_class_blank_dsc = j.at("per_class_blank_dsc").get<std::map<std::string, double>>();
  r.blank_dsc_average = j.at("blank_dsc_average").get<double>();
  r.blank_fg_fraction = j.at("blank_fg_fraction").get<double>();
  r.blank_cases = j.at("blank_cases").get<int>();
  for (const nlohmann::json& s : j.at("per_sample")) {
    SampleScore sc;
    sc.sample_id = s.at("sample_id").get<std::string>();
    sc.label = s.at("label").get<std::string>();
    sc.dsc = s.at("dsc").get<double>();
    sc.gt_blank = s.at("gt_blank").get<bool>();
    sc.pred_fg_fraction = s.at("pred_fg_fraction").get<double>();
    r.per_sample.push_back(std::move(sc));
  }
  return r;
}

nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const AblationRow& row : rows) {
    out.push_back({{"name", row.name},
                   {"toggles",
                    {{"pos_embed", row.toggles.pos_embed},
                     {"layernorm", row.toggles.layernorm},
                     {"tal", row.toggles.tal},
                     {"scale", row.toggles.scale},
                     {"shift", row.toggles.shift}}},
                   {"per_seed_dsc", row.per_seed_dsc},
                   {"mean_dsc", row.mean_dsc}});
  }
  return out;
}

void write_json(const nlohmann::json& j, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt JSON in " + file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// SVG helpers (small hand-rolled writer: tables and horizontal bar charts)
// ---------------------------------------------------------------------------

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text_file(const fs::path& file, const std::string& content) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << content;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// rows[0] is the header.
std::string svg_table(const std::string& title, const std::vector<std::vector<std::string>>& rows) {
  const int cell_h = 24, pad = 10, char_w = 8;
  std::vector<int> widths;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (widths.size() <= c) widths.push_back(0);
      widths[c] = std::max(widths[c], static_cast<int>(row[c].size()) * char_w + 16);
    }
  }
  int total_w = pad * 2;
  for (int w : widths) total_w += w;
  const int total_h = pad * 2 + 30 + cell_h * static_cast<int>(rows.size());

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << total_w << "' height='" << total_h
     << "' font-family='monospace' font-size='13'>\n";
  os << "<text x='" << pad << "' y='" << pad + 12 << "' font-size='15'>" << escape_xml(title)
     << "</text>\n";
  int y = pad + 30;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    int x = pad;
    if (r == 0) {
      os << "<rect x='" << pad << "' y='" << y << "' width='" << total_w - 2 * pad << "' height='"
         << cell_h << "' fill='#eee'/>\n";
    }
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      os << "<text x='" << x + 6 << "' y='" << y + 17 << "'>" << escape_xml(rows[r][c])
         << "</text>\n";
      x += widths[c];
    }
    y += cell_h;
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_barchart(const std::string& title,
                         const std::vector<std::pair<std::string, std::size_t>>& bars) {
  const int bar_h = 26, gap = 10, pad = 10, label_w = 180, chart_w = 420;
  std::size_t max_v = 1;
  for (const auto& [name, v] : bars) max_v = std::max(max_v, v);
  const int total_h = pad * 2 + 30 + static_cast<int>(bars.size()) * (bar_h + gap);
  const int total_w = pad * 2 + label_w + chart_w + 120;

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << total_w << "' height='" << total_h
     << "' font-family='monospace' font-size='13'>\n";
  os << "<text x='" << pad << "' y='" << pad + 12 << "' font-size='15'>" << escape_xml(title)
     << "</text>\n";
  int y = pad + 30;
  for (const auto& [name, v] : bars) {
    const int w = static_cast<int>(static_cast<double>(v) / static_cast<double>(max_v) * chart_w);
    os << "<text x='" << pad << "' y='" << y + 17 << "'>" << escape_xml(name) << "</text>\n";
    os << "<rect x='" << pad + label_w << "' y='" << y << "' width='" << std::max(w, 1)
       << "' height='" << bar_h << "' fill='#4a8'/>\n";
    os << "<text x='" << pad + label_w + std::max(w, 1) + 6 << "' y='" << y + 17 << "'>" << v
       << "</text>\n";
    y += bar_h + gap;
  }
  os << "</svg>\n";
  return os.str();
}

std::string text_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (widths.size() <= c) widths.push_back(0);
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << std::left << std::setw(static_cast<int>(widths[c]) + 2) << row[c];
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace

void emit_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ReportError("report: no run directories given");

  std::vector<std::string> missing;
  struct Run {
    std::string name;
    DiceResult eval;
    ParamReport params;
  };
  std::vector<Run> runs;
  std::vector<std::pair<std::string, nlohmann::json>> ablations;

  for (const fs::path& dir : run_dirs) {
    const fs::path eval_file = dir / "eval.json";
    const fs::path param_file = dir / "param_report.json";
    if (!fs::exists(eval_file)) missing.push_back(eval_file.string());
    if (!fs::exists(param_file)) missing.push_back(param_file.string());
    if (!fs::exists(eval_file) || !fs::exists(param_file)) continue;
    Run run;
    run.name = dir.filename().string();
    run.eval = dice_result_from_json(read_json(eval_file));
    run.params = ParamReport::from_json(read_json(param_file));
    runs.push_back(std::move(run));
    if (fs::exists(dir / "ablation.json")) {
      ablations.emplace_back(dir.filename().string(), read_json(dir / "ablation.json"));
    }
  }
  if (!missing.empty()) {
    std::string msg = "report: missing run artifacts:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw ReportError(msg);
  }

  fs::create_directories(out_dir);

  // (a) per-class DSC table
  std::vector<std::string> classes;
  for (const auto& [cls, v] : runs.front().eval.per_class) classes.push_back(cls);
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"run"};
  header.insert(header.end(), classes.begin(), classes.end());
  header.push_back("Avg.");
  table.push_back(header);
  nlohmann::json dsc_json = nlohmann::json::array();
  for (const Run& run : runs) {
    std::vector<std::string> row{run.name};
    nlohmann::json jrow{{"run", run.name}, {"average", run.eval.average}};
    for (const std::string& cls : classes) {
      const auto it = run.eval.per_class.find(cls);
      const double v = it == run.eval.per_class.end() ? 0.0 : it->second;
      row.push_back(fmt(v));
      jrow["per_class"][cls] = v;
    }
    row.push_back(fmt(run.eval.average));
    table.push_back(std::move(row));
    dsc_json.push_back(std::move(jrow));
  }
  write_json(dsc_json, out_dir / "dsc_table.json");
  write_text_file(out_dir / "dsc_table.txt", text_table(table));
  write_text_file(out_dir / "dsc_table.svg", svg_table("per-class DSC", table));

  // (b) trainable-parameter bar chart (a single run has nothing to compare)
  if (runs.size() >= 2) {
    std::vector<std::pair<std::string, std::size_t>> bars;
    nlohmann::json chart = nlohmann::json::array();
    for (const Run& run : runs) {
      bars.emplace_back(run.name + " (" + run.params.method + ")", run.params.trainable);
      chart.push_back({{"run", run.name},
                       {"method", run.params.method},
                       {"trainable", run.params.trainable},
                       {"total", run.params.total}});
    }
    write_json(chart, out_dir / "param_chart.json");
    write_text_file(out_dir / "param_chart.svg",
                    svg_barchart("trainable parameters per method", bars));
  }

  // (c) ablation table(s)
  for (const auto& [name, j] : ablations) {
    std::vector<std::vector<std::string>> atable;
    atable.push_back({"components", "mean DSC"});
    for (const nlohmann::json& row : j) {
      atable.push_back(
          {row.at("name").get<std::string>(), fmt(row.at("mean_dsc").get<double>())});
    }
    write_json(j, out_dir / "ablation_table.json");
    write_text_file(out_dir / "ablation_table.txt", text_table(atable));
    write_text_file(out_dir / "ablation_table.svg",
                    svg_table("component ablation (" + name + ")", atable));
  }
}

}  // namespace svdseg
