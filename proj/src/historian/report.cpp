#include "chamber/historian.hpp"

#include "chamber/timefmt.hpp"

#include <cstdio>

namespace chamber::historian {

namespace {

std::string fixed2(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f", gateway::round2(v));
    return buf;
}

std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string interval_label(std::int64_t interval_ms) {
    if (interval_ms % 60000 == 0) return std::to_string(interval_ms / 60000) + " min";
    if (interval_ms % 1000 == 0) return std::to_string(interval_ms / 1000) + " s";
    return std::to_string(interval_ms) + " ms";
}

ReportTable build_report(const ReportSpec& spec, const std::vector<TelemetrySample>& rows) {
    ReportTable t;
    t.title = "Temperature & RH data of Chamber " + spec.chamber;
    t.range_line = "Data Report from " + format_report_time(spec.from_ms, spec.utc_offset_min) + " to " +
                   format_report_time(spec.to_ms, spec.utc_offset_min) + " (Time Interval: " +
                   interval_label(spec.interval_ms) + ")";
    t.columns = {"Serial", "Formatted Time"};
    for (int k = 1; k <= gateway::kSensors; ++k) {
        t.columns.push_back("T" + std::to_string(k));
        t.columns.push_back("RH" + std::to_string(k));
    }
    std::size_t serial = 1;
    for (const auto& s : rows) {
        std::vector<std::string> row{std::to_string(serial++), format_report_time(s.ts_ms, spec.utc_offset_min)};
        for (const auto& v : s.sensors) {
            row.push_back(fixed2(v.t_c));
            row.push_back(fixed2(v.rh_pct));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string render_csv(const ReportTable& t) {
    std::string out = csv_cell(t.title) + "\n" + csv_cell(t.range_line) + "\n";
    if (t.rows.empty()) return out + "no data\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + csv_cell(t.columns[i]);
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_cell(row[i]);
        out += '\n';
    }
    return out;
}

std::string render_html(const ReportTable& t) {
    std::string out = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + html_escape(t.title) +
                      "</title></head>\n<body>\n<h1>" + html_escape(t.title) + "</h1>\n<p>" + html_escape(t.range_line) +
                      "</p>\n";
    if (t.rows.empty()) return out + "<p>no data</p>\n</body></html>\n";
    out += "<table>\n<thead><tr>";
    for (const auto& c : t.columns) out += "<th>" + html_escape(c) + "</th>";
    out += "</tr></thead>\n<tbody>\n";
    for (const auto& row : t.rows) {
        out += "<tr>";
        for (const auto& cell : row) out += "<td>" + html_escape(cell) + "</td>";
        out += "</tr>\n";
    }
    return out + "</tbody>\n</table>\n</body></html>\n";
}

}  // namespace chamber::historian
