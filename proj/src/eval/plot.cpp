#include "kbsr/eval/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kbsr {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return nlohmann::json(v).dump();
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<StageCountRow> stage_param_rows(const NetworkConfig& base,
                                            const std::vector<int>& stage_counts,
                                            const std::map<int, double>& psnr_by_stages) {
  std::vector<StageCountRow> rows;
  for (int t : stage_counts) {
    NetworkConfig cfg = base;
    cfg.stages = t;
    StageCountRow row;
    row.stages = t;
    row.params = count_parameters(cfg);
    if (const auto it = psnr_by_stages.find(t); it != psnr_by_stages.end()) row.psnr = it->second;
    rows.push_back(row);
  }
  return rows;
}

void write_stage_params_csv(const std::filesystem::path& csv,
                            const std::vector<StageCountRow>& rows) {
  std::ofstream out(csv, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "stages,params,psnr\n";
  for (const auto& r : rows) out << r.stages << ',' << r.params << ',' << num(r.psnr) << '\n';
}

std::vector<StageCountRow> read_stage_params_csv(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != "stages,params,psnr")
    throw std::runtime_error("unexpected stage-sweep CSV header in " + csv.string());
  std::vector<StageCountRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StageCountRow r;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    r.stages = std::stoi(field);
    std::getline(ss, field, ',');
    r.params = static_cast<Eigen::Index>(std::stoll(field));
    std::getline(ss, field, ',');
    r.psnr = field == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(field);
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error("stage-sweep CSV has no rows: " + csv.string());
  return rows;
}

void plot_from_csv(const std::filesystem::path& csv, const std::filesystem::path& svg) {
  const auto rows = read_stage_params_csv(csv);

  const double W = 640, H = 480, ml = 90, mr = 70, mt = 30, mb = 50;
  const double x0 = ml, x1 = W - mr, y0 = H - mb, y1 = mt;  // y grows downward in SVG

  int t_lo = rows.front().stages, t_hi = rows.front().stages;
  double p_hi = 0.0;
  bool any_psnr = false;
  double q_lo = 0.0, q_hi = 0.0;
  for (const auto& r : rows) {
    t_lo = std::min(t_lo, r.stages);
    t_hi = std::max(t_hi, r.stages);
    p_hi = std::max(p_hi, static_cast<double>(r.params));
    if (!std::isnan(r.psnr)) {
      if (!any_psnr) q_lo = q_hi = r.psnr;
      q_lo = std::min(q_lo, r.psnr);
      q_hi = std::max(q_hi, r.psnr);
      any_psnr = true;
    }
  }
  const double t_span = std::max(1, t_hi - t_lo);
  const double q_span = q_hi > q_lo ? q_hi - q_lo : 1.0;
  const auto sx = [&](double t) { return x0 + (t - t_lo) / t_span * (x1 - x0); };
  const auto sy = [&](double p) { return y0 - p / std::max(p_hi, 1.0) * (y0 - y1); };
  const auto sq = [&](double q) { return y0 - (q - q_lo) / q_span * (y0 - y1); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n"
      << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n"
      << "<line x1=\"" << coord(x0) << "\" y1=\"" << coord(y0) << "\" x2=\"" << coord(x1)
      << "\" y2=\"" << coord(y0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << coord(x0) << "\" y1=\"" << coord(y0) << "\" x2=\"" << coord(x0)
      << "\" y2=\"" << coord(y1) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << coord((x0 + x1) / 2) << "\" y=\"" << coord(H - 12)
      << "\" text-anchor=\"middle\" font-size=\"14\">stages</text>\n"
      << "<text x=\"18\" y=\"" << coord((y0 + y1) / 2)
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
      << coord((y0 + y1) / 2) << ")\">parameters</text>\n";

  for (const auto& r : rows) {
    out << "<text x=\"" << coord(sx(r.stages)) << "\" y=\"" << coord(y0 + 18)
        << "\" text-anchor=\"middle\" font-size=\"12\">" << r.stages << "</text>\n";
  }

  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (size_t i = 0; i < rows.size(); ++i)
    out << (i ? " " : "") << coord(sx(rows[i].stages)) << ',' << coord(sy(rows[i].params));
  out << "\"/>\n";
  for (const auto& r : rows) {
    out << "<circle cx=\"" << coord(sx(r.stages)) << "\" cy=\"" << coord(sy(r.params))
        << "\" r=\"3\" fill=\"#1f77b4\"/>\n"
        << "<text x=\"" << coord(sx(r.stages)) << "\" y=\"" << coord(sy(r.params) - 8)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << r.params << "</text>\n";
  }

  if (any_psnr) {
    out << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" "
           "stroke-dasharray=\"6 3\" points=\"";
    bool first = true;
    for (const auto& r : rows) {
      if (std::isnan(r.psnr)) continue;
      out << (first ? "" : " ") << coord(sx(r.stages)) << ',' << coord(sq(r.psnr));
      first = false;
    }
    out << "\"/>\n";
    for (const auto& r : rows) {
      if (std::isnan(r.psnr)) continue;
      out << "<circle cx=\"" << coord(sx(r.stages)) << "\" cy=\"" << coord(sq(r.psnr))
          << "\" r=\"3\" fill=\"#d62728\"/>\n"
          << "<text x=\"" << coord(sx(r.stages)) << "\" y=\"" << coord(sq(r.psnr) - 8)
          << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#d62728\">" << num(r.psnr)
          << "</text>\n";
    }
    out << "<text x=\"" << coord(W - 18) << "\" y=\"" << coord((y0 + y1) / 2)
        << "\" text-anchor=\"middle\" font-size=\"14\" fill=\"#d62728\" transform=\"rotate(90 "
        << coord(W - 18) << ' ' << coord((y0 + y1) / 2) << ")\">PSNR (dB)</text>\n";
  }
  out << "</svg>\n";

  std::ofstream f(svg, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + svg.string());
  f << out.str();
}

void plot_params_vs_stages(const NetworkConfig& base, const std::vector<int>& stage_counts,
                           const std::map<int, double>& psnr_by_stages,
                           const std::filesystem::path& csv, const std::filesystem::path& svg) {
  write_stage_params_csv(csv, stage_param_rows(base, stage_counts, psnr_by_stages));
  plot_from_csv(csv, svg);
}

}  // namespace kbsr
