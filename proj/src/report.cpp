#include "report.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace ct {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string to_hex(const unsigned char* md, unsigned int len) {
    static const char digits[] = "0123456789abcdef";
    std::string out(2 * static_cast<std::size_t>(len), '0');
    for (unsigned int i = 0; i < len; ++i) {
        out[2 * i] = digits[md[i] >> 4];
        out[2 * i + 1] = digits[md[i] & 0xf];
    }
    return out;
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", x);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw IoError("write to " + path + " failed");
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorCode::runtime, "sha256 digest failed");
    return to_hex(md, len);
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw Error(ErrorCode::runtime, "sha256 context allocation failed");
    std::string err;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        err = "sha256 init failed";
    } else {
        std::vector<char> buf(1 << 20);
        while (in) {
            in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            const std::streamsize got = in.gcount();
            if (got > 0 && EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(got)) != 1) {
                err = "sha256 update failed";
                break;
            }
        }
        if (err.empty() && EVP_DigestFinal_ex(ctx, md, &len) != 1) err = "sha256 final failed";
    }
    EVP_MD_CTX_free(ctx);
    if (!err.empty()) throw Error(ErrorCode::runtime, err);
    return to_hex(md, len);
}

std::string RunManifest::hash() const {
    ordered_json j;
    j["version"] = version;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    return sha256_hex(j.dump());
}

RunManifest make_manifest(const std::string& command, const ConfigMap& cfg) {
    RunManifest m;
    m.version = k_version;
    m.command = command;
    for (const auto& [key, value] : cfg.entries()) m.config[key] = value;
    return m;
}

void add_input(RunManifest& m, const std::string& label, const std::string& path) {
    m.inputs[label] = file_sha256(path);
}

void write_manifest(const std::string& path, const RunManifest& m) {
    ordered_json j;
    j["version"] = m.version;
    j["command"] = m.command;
    j["hash"] = m.hash();
    j["config"] = m.config;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    j["timings_seconds"] = m.timings;
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    finish(out, path);
}

Quantiles compute_quantiles(std::vector<double> values) {
    if (values.empty()) throw InvalidArgumentError("quantiles need at least one value");
    std::sort(values.begin(), values.end());
    const auto rank = [&](double p) {
        const auto n = static_cast<double>(values.size());
        const auto idx = static_cast<std::size_t>(std::ceil(p * n)) - 1;
        return values[std::min(idx, values.size() - 1)];
    };
    Quantiles q;
    q.p05 = rank(0.05);
    q.p25 = rank(0.25);
    q.p50 = rank(0.50);
    q.p75 = rank(0.75);
    q.p95 = rank(0.95);
    return q;
}

void write_metrics_csv(const std::string& path, const std::vector<LogRow>& log,
                       const std::string& manifest_hash) {
    auto out = open_out(path);
    out << "# manifest " << manifest_hash << '\n';
    out << "epoch,lr,e0,e1,e2,jacobian,r1_low,r1_mid,r1_high,r2_low,r2_mid,r2_high,total,"
           "e_train,e_test\n";
    for (const auto& row : log) {
        const CostTerms& t = row.terms;
        out << row.epoch << ',' << fmt(row.lr) << ',' << fmt(t.e0) << ',' << fmt(t.e1) << ','
            << fmt(t.e2) << ',' << fmt(t.jac) << ',' << fmt(t.r1[0]) << ',' << fmt(t.r1[1]) << ','
            << fmt(t.r1[2]) << ',' << fmt(t.r2[0]) << ',' << fmt(t.r2[1]) << ',' << fmt(t.r2[2])
            << ',' << fmt(t.total()) << ',' << fmt(row.e_train) << ',' << fmt(row.e_test) << '\n';
    }
    finish(out, path);
}

void write_vulnerability_csv(const std::string& path, const VulnerabilitySummary& summary,
                             const std::string& manifest_hash) {
    auto out = open_out(path);
    out << "# manifest " << manifest_hash << '\n';
    out << "sample,v_max,v_sen,v_inv,lambda_max\n";
    for (std::size_t i = 0; i < summary.rows.size(); ++i) {
        const VulnerabilityRow& r = summary.rows[i];
        out << i << ',' << fmt(r.v_max) << ',' << fmt(r.v_sen) << ',' << fmt(r.v_inv) << ','
            << fmt(r.lambda_max) << '\n';
    }
    finish(out, path);
}

void write_vulnerability_json(const std::string& path, const VulnerabilitySummary& summary,
                              double alignment, const std::string& manifest_hash) {
    const auto column = [&](double VulnerabilityRow::* field) {
        std::vector<double> v;
        v.reserve(summary.rows.size());
        for (const auto& row : summary.rows) v.push_back(row.*field);
        return v;
    };
    const auto quant_json = [&](double VulnerabilityRow::* field) {
        const Quantiles q = compute_quantiles(column(field));
        ordered_json j;
        j["p05"] = q.p05;
        j["p25"] = q.p25;
        j["p50"] = q.p50;
        j["p75"] = q.p75;
        j["p95"] = q.p95;
        return j;
    };
    ordered_json j;
    j["manifest"] = manifest_hash;
    j["count"] = summary.rows.size();
    j["mean"] = {{"v_max", summary.v_max_mean},
                 {"v_sen", summary.v_sen_mean},
                 {"v_inv", summary.v_inv_mean}};
    j["alignment"] = alignment;
    j["quantiles"] = {{"v_max", quant_json(&VulnerabilityRow::v_max)},
                      {"v_sen", quant_json(&VulnerabilityRow::v_sen)},
                      {"v_inv", quant_json(&VulnerabilityRow::v_inv)}};
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    finish(out, path);
}

void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& points,
                     const std::string& manifest_hash) {
    auto out = open_out(path);
    out << "# manifest " << manifest_hash << '\n';
    out << "sigma,e_corrected,e_uncorrected,v_max,v_sen,v_inv\n";
    for (const auto& p : points) {
        out << fmt(p.sigma) << ',' << fmt(p.e_corrected) << ',' << fmt(p.e_uncorrected) << ','
            << fmt(p.v_max_mean) << ',' << fmt(p.v_sen_mean) << ',' << fmt(p.v_inv_mean) << '\n';
    }
    finish(out, path);
}

void write_sweep_svg(const std::string& path, const std::vector<SweepPoint>& points,
                     const std::string& manifest_hash) {
    if (points.size() < 2) throw InvalidArgumentError("sweep plot needs at least two points");
    struct Series {
        const char* name;
        const char* color;
        double SweepPoint::* field;
    };
    const Series series[] = {
        {"e_corrected", "#1f77b4", &SweepPoint::e_corrected},
        {"e_uncorrected", "#7f7f7f", &SweepPoint::e_uncorrected},
        {"v_max", "#d62728", &SweepPoint::v_max_mean},
        {"v_sen", "#ff7f0e", &SweepPoint::v_sen_mean},
        {"v_inv", "#2ca02c", &SweepPoint::v_inv_mean},
    };

    double x_lo = points.front().sigma, x_hi = points.front().sigma, y_hi = 0.0;
    for (const auto& p : points) {
        x_lo = std::min(x_lo, p.sigma);
        x_hi = std::max(x_hi, p.sigma);
        for (const auto& s : series) y_hi = std::max(y_hi, p.*(s.field));
    }
    if (!(x_hi > x_lo)) throw InvalidArgumentError("sweep plot needs distinct sigmas");
    if (!(y_hi > 0.0)) y_hi = 1.0;
    y_hi *= 1.05;

    const double width = 760.0, height = 460.0;
    const double ml = 70.0, mr = 180.0, mt = 30.0, mb = 55.0;
    const double pw = width - ml - mr, ph = height - mt - mb;
    const auto px = [&](double x) { return ml + pw * (x - x_lo) / (x_hi - x_lo); };
    const auto py = [&](double y) { return mt + ph * (1.0 - y / y_hi); };
    const auto coord = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };
    const auto label = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return std::string(buf);
    };

    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<!-- manifest " << manifest_hash << " -->\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    out << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = py(y_hi * i / 4.0);
        out << "<line x1=\"" << coord(ml) << "\" y1=\"" << coord(y) << "\" x2=\""
            << coord(ml + pw) << "\" y2=\"" << coord(y) << "\"/>\n";
    }
    out << "</g>\n";

    out << "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = y_hi * i / 4.0;
        out << "<text x=\"" << coord(ml - 8.0) << "\" y=\"" << coord(py(yv) + 4.0)
            << "\" text-anchor=\"end\">" << label(yv) << "</text>\n";
    }
    for (const auto& p : points) {
        out << "<text x=\"" << coord(px(p.sigma)) << "\" y=\"" << coord(mt + ph + 18.0)
            << "\" text-anchor=\"middle\">" << label(p.sigma) << "</text>\n";
    }
    out << "<text x=\"" << coord(ml + pw / 2.0) << "\" y=\"" << coord(height - 14.0)
        << "\" text-anchor=\"middle\">noise sigma</text>\n";
    out << "<text x=\"18\" y=\"" << coord(mt + ph / 2.0) << "\" text-anchor=\"middle\" "
        << "transform=\"rotate(-90 18 " << coord(mt + ph / 2.0) << ")\">percent</text>\n";
    out << "</g>\n";

    out << "<rect x=\"" << coord(ml) << "\" y=\"" << coord(mt) << "\" width=\"" << coord(pw)
        << "\" height=\"" << coord(ph) << "\" fill=\"none\" stroke=\"#333333\"/>\n";

    int row = 0;
    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (i) out << ' ';
            out << coord(px(points[i].sigma)) << ',' << coord(py(points[i].*(s.field)));
        }
        out << "\"/>\n";
        for (const auto& p : points)
            out << "<circle cx=\"" << coord(px(p.sigma)) << "\" cy=\""
                << coord(py(p.*(s.field))) << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
        const double ly = mt + 16.0 + 20.0 * row++;
        out << "<line x1=\"" << coord(ml + pw + 14.0) << "\" y1=\"" << coord(ly) << "\" x2=\""
            << coord(ml + pw + 38.0) << "\" y2=\"" << coord(ly) << "\" stroke=\"" << s.color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\" x=\""
            << coord(ml + pw + 44.0) << "\" y=\"" << coord(ly + 4.0) << "\">" << s.name
            << "</text>\n";
    }
    out << "</svg>\n";
    finish(out, path);
}

void write_pgm(const std::string& path, const Image& img, const std::string& manifest_hash) {
    double lo = img.p[0], hi = img.p[0];
    for (const double v : img.p) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    auto out = open_out(path);
    out << "P2\n";
    out << "# manifest " << manifest_hash << '\n';
    out << "# range " << fmt(lo) << ' ' << fmt(hi) << '\n';
    out << img.grid << ' ' << img.grid << "\n255\n";
    for (int iv = img.grid - 1; iv >= 0; --iv) {
        for (int iu = 0; iu < img.grid; ++iu) {
            const double v = img.at(iu, iv);
            const int level =
                span > 0.0 ? static_cast<int>(std::lround(255.0 * (v - lo) / span)) : 0;
            out << level << (iu + 1 < img.grid ? ' ' : '\n');
        }
    }
    finish(out, path);
}

}  // namespace ct
