#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "tgt/common.hpp"

namespace tgt {

// Minimal CSV writer; every file gets a header row. Reals are written with
// %.17g so identical runs produce byte-identical files.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw IoError("cannot open CSV for writing: " + path);
        write_row(header);
    }

    void write_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

}  // namespace tgt
