#pragma once

// Two-stage reading extraction from a multimodal model.
//
// Stage 1 sends the image and the canonical prompt only. Stage 2 appends a
// metadata block (R, D_m, D_n, H_y) measured by the geometric pipeline.
// Responses are content-addressed in a cache keyed by model tag, stage,
// metadata and image bytes; a hit never reaches the backend.

#include "gaugeread/scale_calib.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <charconv>
#include <cmath>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace gauge {

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
};

class UnparseableReading : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StageMetadata {
    double ratio = 0;
    double d_m_px = 0;
    double d_n_px = 0;
    double plate_height_px = 0;

    static StageMetadata from(const ScaleGeometry& g) { return {g.ratio, g.d_m, g.d_n, g.plate_height_px}; }
};

struct ReadingRequest {
    std::string image_id;
    std::vector<std::uint8_t> image_bytes;  // encoded PNG
    int stage = 1;
    std::optional<StageMetadata> metadata;
    std::string model_tag;

    void validate() const
    {
        if (stage != 1 && stage != 2) throw std::invalid_argument("ReadingRequest: stage must be 1 or 2");
        if (stage == 2 && !metadata) throw std::invalid_argument("ReadingRequest: stage 2 requires metadata");
        if (stage == 1 && metadata) throw std::invalid_argument("ReadingRequest: stage 1 must not carry metadata");
    }
};

struct ReadingResponse {
    std::optional<double> reading_cm;
    std::string raw_text;
    double latency_ms = 0;
    int attempts = 0;  // 0 on a cache hit
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Prompt

inline constexpr std::string_view kAnswerMarker = "READING_CM:";

inline std::string build_prompt(int stage, const std::optional<StageMetadata>& meta = std::nullopt)
{
    if (stage != 1 && stage != 2) throw std::invalid_argument("build_prompt: stage must be 1 or 2");
    if (stage == 2 && !meta) throw std::invalid_argument("build_prompt: stage 2 requires geometric metadata");
    if (stage == 1 && meta) throw std::invalid_argument("build_prompt: stage 1 must not carry metadata");

    std::ostringstream os;
    os << "The image shows a river staff gauge plate down to the water surface.\n"
          "1. Identify the topmost visible digit on the plate.\n"
          "2. Determine the full number sequence from top to bottom.\n"
          "3. Detect any partially visible digit at the lowest edge, where the plate meets the water.\n"
          "4. The gauge plate follows a 1-cm resolution: bold numerals mark every 10 cm and "
          "triangular divisions mark each centimeter between them.\n"
          "Estimate the water level in centimeters.\n";
    if (stage == 2) {
        os << "\nGeometric metadata measured on this image:\n"
           << "scale_gap_ratio_R: " << format_number(meta->ratio) << "\n"
           << "major_gap_px_Dm: " << format_number(meta->d_m_px) << "\n"
           << "waterline_gap_px_Dn: " << format_number(meta->d_n_px) << "\n"
           << "plate_height_px_Hy: " << format_number(meta->plate_height_px) << "\n"
           << "Convert pixels to centimeters with these values: Dm pixels span one 10 cm interval, "
              "and the waterline lies R x 10 cm below the lowest fully visible numeral.\n";
    }
    os << "\nAnswer on a final line formatted exactly as:\n" << kAnswerMarker << " <number>\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// Parses [+-]?digits[.digits][e[+-]digits] at `pos`; advances `pos` past it.
inline std::optional<double> number_at(std::string_view s, std::size_t& pos)
{
    std::size_t i = pos;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    const std::size_t digits = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i == digits) return std::nullopt;
    if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
        ++i;
        while (i < s.size() && is_digit(s[i])) ++i;
    }
    if (i + 1 < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
        if (j < s.size() && is_digit(s[j])) {
            while (j < s.size() && is_digit(s[j])) ++j;
            i = j;
        }
    }
    std::size_t start = pos;
    if (s[start] == '+') ++start;
    double v = 0;
    const auto r = std::from_chars(s.data() + start, s.data() + i, v);
    if (r.ec != std::errc{}) return std::nullopt;
    pos = i;
    return v;
}

inline double accept_reading(double v)
{
    if (!std::isfinite(v)) throw UnparseableReading("reading is not finite");
    if (v < 0.0) throw UnparseableReading("reading is negative");
    return v == 0.0 ? 0.0 : v;
}

}  // namespace detail

/// Number after the last READING_CM: marker, else the last standalone
/// decimal number. Result is finite and >= 0, or UnparseableReading.
inline double parse_reading(std::string_view text)
{
    const std::size_t m = text.rfind(kAnswerMarker);
    if (m != std::string_view::npos) {
        std::size_t pos = m + kAnswerMarker.size();
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
        if (auto v = detail::number_at(text, pos)) return detail::accept_reading(*v);
    }

    std::optional<double> last;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!detail::is_digit(text[i])) continue;
        if (i > 0 && (detail::is_word_char(text[i - 1]) || text[i - 1] == '.')) {
            while (i + 1 < text.size() && (detail::is_digit(text[i + 1]) || text[i + 1] == '.')) ++i;
            continue;
        }
        std::size_t start = i;
        // A minus sign counts only when it is not a hyphen between words.
        if (i > 0 && text[i - 1] == '-' && (i < 2 || !detail::is_word_char(text[i - 2]))) start = i - 1;
        std::size_t pos = start;
        const auto v = detail::number_at(text, pos);
        if (!v) continue;
        const bool standalone = pos >= text.size() || !detail::is_word_char(text[pos]);
        if (standalone) last = *v;
        i = pos - 1;
    }
    if (!last) throw UnparseableReading("no numeric reading in model response");
    return detail::accept_reading(*last);
}

// ---------------------------------------------------------------------------
// Hashing and wire format

inline std::string sha256_hex(std::string_view data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

/// Content hash over length-prefixed (model_tag, stage, metadata, image bytes).
inline std::string request_hash(const ReadingRequest& req)
{
    std::string buf;
    auto field = [&buf](std::string_view s) {
        const std::uint64_t n = s.size();
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
        buf.append(s);
    };
    field(req.model_tag);
    field(std::to_string(req.stage));
    if (req.metadata) {
        const auto& m = *req.metadata;
        field("meta:" + format_number(m.ratio) + "," + format_number(m.d_m_px) + "," + format_number(m.d_n_px) + "," +
              format_number(m.plate_height_px));
    } else {
        field("nometa");
    }
    field(std::string_view(reinterpret_cast<const char*>(req.image_bytes.data()), req.image_bytes.size()));
    return sha256_hex(buf);
}

/// Provider-neutral request body {model, prompt, image_base64}.
inline nlohmann::json make_payload(const ReadingRequest& req)
{
    req.validate();
    return {{"model", req.model_tag}, {"prompt", build_prompt(req.stage, req.metadata)},
            {"image_base64", base64_encode(req.image_bytes)}};
}

// ---------------------------------------------------------------------------
// Backends

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual std::string name() const = 0;
    /// Returns raw model text. Throws TransportError for retryable failures.
    virtual std::string complete(const ReadingRequest& req, const nlohmann::json& payload,
                                 std::chrono::milliseconds timeout) = 0;
};

struct MockTruth {
    double reading_cm = 0;
    std::vector<double> major_values_cm;
};

/// Deterministic in-process model. Stage 2 applies the calibration formula to
/// the metadata ratio, with M the plate numeral consistent with the true
/// reading. Stage 1 returns the true reading plus a fixed per-image offset.
class MockBackend final : public ModelBackend {
public:
    explicit MockBackend(std::map<std::string, MockTruth> truth, double stage1_spread_cm = 8.0)
        : truth_(std::move(truth)), spread_(stage1_spread_cm)
    {
    }

    std::string name() const override { return "mock"; }

    std::string complete(const ReadingRequest& req, const nlohmann::json&, std::chrono::milliseconds) override
    {
        const auto it = truth_.find(req.image_id);
        if (it == truth_.end()) return "I cannot determine the water level from this image.";
        const MockTruth& t = it->second;
        double v = 0;
        if (req.stage == 2) {
            const double r = req.metadata->ratio;
            if (t.major_values_cm.empty() || !(r >= 0.0 && r <= 1.0)) return "The scale is not readable.";
            double m = t.major_values_cm.front();
            for (double c : t.major_values_cm) {
                if (std::abs(c - kMajorIntervalCm * r - t.reading_cm) < std::abs(m - kMajorIntervalCm * r - t.reading_cm)) m = c;
            }
            v = compute_reading(m, r);
        } else {
            std::uint64_t h = 1469598103934665603ull;
            for (unsigned char c : req.image_id) h = (h ^ c) * 1099511628211ull;
            const double u = static_cast<double>(h % 10001) / 10000.0;
            v = std::max(0.0, std::round((t.reading_cm + spread_ * (2.0 * u - 1.0)) * 10.0) / 10.0);
        }
        return "Reading the numerals from top to bottom.\n" + std::string(kAnswerMarker) + " " + format_number(v);
    }

private:
    std::map<std::string, MockTruth> truth_;
    double spread_;
};

// ---------------------------------------------------------------------------
// Cache

struct CacheEntry {
    std::string request_hash;
    std::string raw_response;
    std::optional<double> reading_cm;
};

/// Content-addressed response store. Entries are immutable once written;
/// safe for concurrent use. With an empty directory it is memory-only.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir = {}) : dir_(std::move(dir))
    {
        if (!dir_.empty()) std::filesystem::create_directories(dir_);
    }

    std::optional<CacheEntry> get(const std::string& key)
    {
        {
            std::shared_lock lock(mu_);
            if (auto it = mem_.find(key); it != mem_.end()) return it->second;
        }
        if (dir_.empty()) return std::nullopt;
        std::ifstream in(file_for(key), std::ios::binary);
        if (!in) return std::nullopt;
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
        CacheEntry e{j.at("request_hash").get<std::string>(), j.at("raw_response").get<std::string>(), std::nullopt};
        if (!j.at("reading_cm").is_null()) e.reading_cm = j.at("reading_cm").get<double>();
        if (e.request_hash != key) return std::nullopt;
        std::unique_lock lock(mu_);
        return mem_.emplace(key, std::move(e)).first->second;
    }

    /// First writer wins; later puts for the same key are ignored.
    void put(const CacheEntry& e)
    {
        {
            std::unique_lock lock(mu_);
            if (!mem_.emplace(e.request_hash, e).second) return;
        }
        if (dir_.empty()) return;
        nlohmann::json j{{"request_hash", e.request_hash},
                         {"raw_response", e.raw_response},
                         {"reading_cm", e.reading_cm ? nlohmann::json(*e.reading_cm) : nlohmann::json(nullptr)}};
        const auto final_path = file_for(e.request_hash);
        auto tmp = final_path;
        tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << j.dump(1) << '\n';
            if (!out) throw std::runtime_error("cache: cannot write " + tmp.string());
        }
        std::filesystem::rename(tmp, final_path);
    }

    /// Stored entries; for a file-backed cache this counts the files on disk.
    std::size_t size() const
    {
        if (dir_.empty()) {
            std::shared_lock lock(mu_);
            return mem_.size();
        }
        std::size_t n = 0;
        for (const auto& f : std::filesystem::directory_iterator(dir_)) n += f.path().extension() == ".json";
        return n;
    }

private:
    std::filesystem::path file_for(const std::string& key) const { return dir_ / (key + ".json"); }

    std::filesystem::path dir_;
    mutable std::shared_mutex mu_;
    std::map<std::string, CacheEntry> mem_;
};

// ---------------------------------------------------------------------------
// Client

/// Refills `rate` tokens per second up to `burst`. A rate <= 0 disables it.
class TokenBucket {
public:
    TokenBucket(double rate, double burst) : rate_(rate), burst_(std::max(1.0, burst)), tokens_(burst_) {}

    void acquire()
    {
        if (rate_ <= 0.0) return;
        std::unique_lock lock(mu_);
        for (;;) {
            const auto now = std::chrono::steady_clock::now();
            tokens_ = std::min(burst_, tokens_ + rate_ * std::chrono::duration<double>(now - last_).count());
            last_ = now;
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

private:
    double rate_;
    double burst_;
    double tokens_;
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
    std::mutex mu_;
};

struct ClientOptions {
    std::chrono::milliseconds timeout{30000};
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{1000};  // doubles per retry
    double jitter = 0.2;
    int max_in_flight = 4;
    double rate_per_sec = 0.0;
    double burst = 4.0;
    std::uint64_t seed = 0;
    std::function<void(std::chrono::milliseconds)> sleeper;  // default: sleep_for
};

class ReadingClient {
public:
    ReadingClient(std::shared_ptr<ModelBackend> backend, std::shared_ptr<ResponseCache> cache, ClientOptions opt = {})
        : backend_(std::move(backend)), cache_(std::move(cache)), opt_(std::move(opt)),
          slots_(std::max(1, opt_.max_in_flight)), bucket_(opt_.rate_per_sec, opt_.burst), rng_(opt_.seed)
    {
        if (!backend_) throw std::invalid_argument("ReadingClient: backend not configured");
        if (!cache_) cache_ = std::make_shared<ResponseCache>();
        if (opt_.max_attempts < 1) throw std::invalid_argument("ReadingClient: max_attempts must be >= 1");
        if (opt_.max_in_flight > kMaxInFlight) throw std::invalid_argument("ReadingClient: max_in_flight too large");
    }

    const ModelBackend& backend() const { return *backend_; }

    /// Throws TransportError after the last failed attempt and
    /// UnparseableReading when the response holds no reading.
    ReadingResponse extract(const ReadingRequest& req)
    {
        req.validate();
        const std::string key = request_hash(req);
        if (auto hit = cache_->get(key)) return finish(*hit, 0, 0.0);

        const nlohmann::json payload = make_payload(req);
        const auto t0 = std::chrono::steady_clock::now();
        std::string raw;
        int attempt = 0;
        {
            slots_.acquire();
            struct Release {
                std::counting_semaphore<kMaxInFlight>& s;
                ~Release() { s.release(); }
            } release{slots_};
            for (;;) {
                ++attempt;
                bucket_.acquire();
                try {
                    raw = backend_->complete(req, payload, opt_.timeout);
                    break;
                } catch (const TransportError& e) {
                    if (attempt >= opt_.max_attempts) {
                        throw TransportError("model backend failed after " + std::to_string(attempt) +
                                             " attempts: " + e.what());
                    }
                }
                sleep(backoff(attempt));
            }
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        CacheEntry e{key, raw, std::nullopt};
        try {
            e.reading_cm = parse_reading(raw);
        } catch (const UnparseableReading&) {
        }
        cache_->put(e);
        return finish(e, attempt, ms);
    }

    /// Delay before retry `attempt` (1-based): base * 2^(attempt-1), +-jitter.
    std::chrono::milliseconds backoff(int attempt)
    {
        double f = 1.0;
        {
            std::lock_guard lock(rng_mu_);
            f += std::uniform_real_distribution<double>(-opt_.jitter, opt_.jitter)(rng_);
        }
        const double base = static_cast<double>(opt_.backoff_base.count()) * std::ldexp(1.0, attempt - 1);
        return std::chrono::milliseconds(static_cast<long long>(std::llround(base * f)));
    }

private:
    static constexpr std::ptrdiff_t kMaxInFlight = 256;

    static ReadingResponse finish(const CacheEntry& e, int attempts, double ms)
    {
        if (!e.reading_cm) throw UnparseableReading("unparseable model response: " + e.raw_response.substr(0, 200));
        return {e.reading_cm, e.raw_response, ms, attempts};
    }

    void sleep(std::chrono::milliseconds d)
    {
        if (opt_.sleeper) {
            opt_.sleeper(d);
        } else {
            std::this_thread::sleep_for(d);
        }
    }

    std::shared_ptr<ModelBackend> backend_;
    std::shared_ptr<ResponseCache> cache_;
    ClientOptions opt_;
    std::counting_semaphore<kMaxInFlight> slots_;
    TokenBucket bucket_;
    std::mutex rng_mu_;
    std::mt19937_64 rng_;
};

}  // namespace gauge
