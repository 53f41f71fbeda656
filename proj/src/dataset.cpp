#include <algorithm>
#include <cctype>
#include <set>

#include "fsad/data.hpp"

namespace fs = std::filesystem;

namespace fsad {

Layout parse_layout(const std::string& s) {
    if (s == "mvtec" || s == "mvtec-style") return Layout::MVTec;
    if (s == "dagm" || s == "dagm-style") return Layout::DAGM;
    fail(ErrorKind::ConfigError, "unknown dataset layout '" + s + "' (expected mvtec or dagm)");
}

const char* to_string(Layout l) { return l == Layout::MVTec ? "mvtec" : "dagm"; }

const CategoryIndex& DatasetIndex::category(const std::string& name) const {
    for (const auto& c : categories)
        if (c.name == name) return c;
    fail(ErrorKind::NotFound, "unknown category '" + name + "'");
}

std::vector<std::string> DatasetIndex::category_names() const {
    std::vector<std::string> out;
    for (const auto& c : categories) out.push_back(c.name);
    return out;
}

void DatasetIndex::validate() const {
    if (categories.empty()) fail(ErrorKind::SchemaViolation, "dataset has no categories");
    std::set<std::string> seen;
    for (const auto& c : categories) {
        if (c.name.empty()) fail(ErrorKind::SchemaViolation, "empty category name");
        if (!seen.insert(c.name).second) fail(ErrorKind::SchemaViolation, "duplicate category '" + c.name + "'");
        if (c.train_normals.empty() && c.test_items.empty()) fail(ErrorKind::SchemaViolation, "category '" + c.name + "' is empty");
        for (const auto& t : c.test_items) {
            if (t.label == Label::Anomalous && !t.mask) fail(ErrorKind::SchemaViolation, "anomalous test image " + t.image + " has no mask");
            if (t.label == Label::Normal && t.mask) fail(ErrorKind::SchemaViolation, "normal test image " + t.image + " carries a mask");
        }
    }
}

namespace {

bool is_image_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) return false;
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fs::path> list_dirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string rel(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

// Case-insensitive child directory lookup ("Train" vs "train").
std::optional<fs::path> child_dir(const fs::path& dir, const std::string& name) {
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_directory()) continue;
        std::string n = e.path().filename().string();
        if (n.size() == name.size() &&
            std::equal(n.begin(), n.end(), name.begin(), [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b)); })) {
            return e.path();
        }
    }
    return std::nullopt;
}

std::optional<fs::path> find_with_stem(const fs::path& dir, const std::string& stem) {
    if (!fs::is_directory(dir)) return std::nullopt;
    for (const auto& p : list_images(dir))
        if (p.stem().string() == stem) return p;
    return std::nullopt;
}

CategoryIndex scan_mvtec_category(const fs::path& root, const fs::path& dir) {
    CategoryIndex c;
    c.name = dir.filename().string();
    for (const auto& p : list_images(dir / "train" / "good")) c.train_normals.push_back(rel(p, root));
    const fs::path test = dir / "test";
    if (fs::is_directory(test)) {
        for (const auto& defect_dir : list_dirs(test)) {
            const std::string defect = defect_dir.filename().string();
            for (const auto& p : list_images(defect_dir)) {
                TestItem item;
                item.image = rel(p, root);
                if (defect == "good") {
                    item.label = Label::Normal;
                } else {
                    item.label = Label::Anomalous;
                    auto mask = find_with_stem(dir / "ground_truth" / defect, p.stem().string() + "_mask");
                    if (!mask) fail(ErrorKind::SchemaViolation, "anomalous test image " + item.image + " has no ground-truth mask");
                    item.mask = rel(*mask, root);
                }
                c.test_items.push_back(std::move(item));
            }
        }
    }
    std::sort(c.test_items.begin(), c.test_items.end(), [](const TestItem& a, const TestItem& b) { return a.image < b.image; });
    return c;
}

CategoryIndex scan_dagm_category(const fs::path& root, const fs::path& dir) {
    CategoryIndex c;
    c.name = dir.filename().string();
    if (auto train = child_dir(dir, "train")) {
        auto label_dir = child_dir(*train, "label");
        for (const auto& p : list_images(*train)) {
            const bool labeled = label_dir && find_with_stem(*label_dir, p.stem().string() + "_label");
            if (!labeled) c.train_normals.push_back(rel(p, root));
        }
    }
    if (auto test = child_dir(dir, "test")) {
        auto label_dir = child_dir(*test, "label");
        for (const auto& p : list_images(*test)) {
            TestItem item;
            item.image = rel(p, root);
            std::optional<fs::path> mask;
            if (label_dir) mask = find_with_stem(*label_dir, p.stem().string() + "_label");
            if (mask) {
                item.label = Label::Anomalous;
                item.mask = rel(*mask, root);
            }
            c.test_items.push_back(std::move(item));
        }
    }
    return c;
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root, Layout layout) {
    if (!fs::is_directory(root)) fail(ErrorKind::NotFound, "dataset root does not exist: " + root.string());
    auto dirs = list_dirs(root);
    if (dirs.empty()) fail(ErrorKind::NotFound, "dataset root has no category directories: " + root.string());
    DatasetIndex index;
    index.root = root;
    for (const auto& d : dirs) {
        CategoryIndex c = layout == Layout::MVTec ? scan_mvtec_category(root, d) : scan_dagm_category(root, d);
        if (c.train_normals.empty() || c.test_items.empty()) fail(ErrorKind::SchemaViolation, "category '" + c.name + "' has an empty train or test split");
        index.categories.push_back(std::move(c));
    }
    std::sort(index.categories.begin(), index.categories.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    index.validate();
    return index;
}

}  // namespace fsad
