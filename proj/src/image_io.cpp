#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fsad/data.hpp"

namespace fsad {

RawImage decode_image(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) fail(ErrorKind::NotFound, "image not found: " + path.string());
    cv::Mat m;
    try {
        m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    } catch (const cv::Exception& e) {
        fail(ErrorKind::DecodeError, "cannot decode " + path.string() + ": " + e.what());
    }
    if (m.empty()) fail(ErrorKind::DecodeError, "cannot decode " + path.string());
    if (m.depth() == CV_16U) {
        m.convertTo(m, CV_8U, 1.0 / 257.0);
    } else if (m.depth() != CV_8U) {
        fail(ErrorKind::DecodeError, "unsupported pixel depth in " + path.string());
    }
    const int ch = m.channels();
    if (ch != 1 && ch != 3 && ch != 4) fail(ErrorKind::DecodeError, "unsupported channel count in " + path.string());

    RawImage raw;
    raw.height = m.rows;
    raw.width = m.cols;
    raw.channels = ch == 1 ? 1 : 3;
    raw.pixels.resize(static_cast<std::size_t>(raw.height) * raw.width * raw.channels);
    for (int y = 0; y < m.rows; ++y) {
        const std::uint8_t* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < m.cols; ++x) {
            std::uint8_t* dst = raw.pixels.data() + (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
            if (ch == 1) {
                dst[0] = row[x];
            } else {
                // OpenCV stores BGR(A)
                const std::uint8_t* src = row + static_cast<std::size_t>(x) * ch;
                dst[0] = src[2];
                dst[1] = src[1];
                dst[2] = src[0];
            }
        }
    }
    return raw;
}

Tensor<float> resize_bilinear(const Tensor<float>& src, int out_h, int out_w) {
    if (src.shape.size() != 3) fail(ErrorKind::ShapeError, "resize_bilinear expects [C,H,W]");
    const int C = src.shape[0], H = src.shape[1], W = src.shape[2];
    if (H == out_h && W == out_w) return src;
    Tensor<float> out({C, out_h, out_w});
    const double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;
    std::vector<int> x0(out_w), x1(out_w);
    std::vector<double> wx(out_w);
    for (int x = 0; x < out_w; ++x) {
        const double s = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
        x0[x] = static_cast<int>(std::floor(s));
        x1[x] = std::min(x0[x] + 1, W - 1);
        wx[x] = s - x0[x];
    }
    for (int y = 0; y < out_h; ++y) {
        const double s = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(std::floor(s));
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = s - y0;
        for (int c = 0; c < C; ++c)
            for (int x = 0; x < out_w; ++x) {
                const double top = (1 - wx[x]) * src.at(c, y0, x0[x]) + wx[x] * src.at(c, y0, x1[x]);
                const double bot = (1 - wx[x]) * src.at(c, y1, x0[x]) + wx[x] * src.at(c, y1, x1[x]);
                out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
            }
    }
    return out;
}

ImageTensor preprocess(const RawImage& raw, const PreprocessConfig& cfg) {
    if (raw.channels != 1 && raw.channels != 3) fail(ErrorKind::DecodeError, "images must have 1 or 3 channels");
    if (raw.height <= 0 || raw.width <= 0 || raw.pixels.size() != static_cast<std::size_t>(raw.height) * raw.width * raw.channels) {
        fail(ErrorKind::DecodeError, "pixel buffer does not match the declared image size");
    }
    if (cfg.resolution <= 0) fail(ErrorKind::ConfigError, "resolution must be positive");
    Tensor<float> chw({3, raw.height, raw.width});
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const int sc = raw.channels == 1 ? 0 : c;
                chw.at(c, y, x) = static_cast<float>(raw.pixels[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels + sc]) / 255.0f;
            }
    ImageTensor out = resize_bilinear(chw, cfg.resolution, cfg.resolution);
    if (cfg.standardize) {
        const std::size_t P = static_cast<std::size_t>(cfg.resolution) * cfg.resolution;
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < P; ++i) out.data[c * P + i] = (out.data[c * P + i] - kChannelMean[c]) / kChannelStd[c];
    }
    return out;
}

ImageTensor load_image(const std::filesystem::path& path, const PreprocessConfig& cfg) {
    return preprocess(decode_image(path), cfg);
}

Mask resize_mask_nearest(const RawImage& raw, int out_h, int out_w) {
    Mask m{out_h, out_w, std::vector<std::uint8_t>(static_cast<std::size_t>(out_h) * out_w, 0)};
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(raw.height - 1, static_cast<int>(std::floor((y + 0.5) * raw.height / out_h)));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(raw.width - 1, static_cast<int>(std::floor((x + 0.5) * raw.width / out_w)));
            const std::uint8_t v = raw.pixels[(static_cast<std::size_t>(sy) * raw.width + sx) * raw.channels];
            m.cells[static_cast<std::size_t>(y) * out_w + x] = v > 0 ? 1 : 0;
        }
    }
    return m;
}

Mask load_mask(const std::filesystem::path& path, int resolution) {
    return resize_mask_nearest(decode_image(path), resolution, resolution);
}

std::shared_ptr<const ImageTensor> ImageCache::get(const std::filesystem::path& path) {
    const std::string key = path.string();
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
    }
    auto img = std::make_shared<const ImageTensor>(load_image(path, cfg_));
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(key, img).first->second;
}

}  // namespace fsad
