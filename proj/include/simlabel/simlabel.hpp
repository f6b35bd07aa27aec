// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "simlabel/common.hpp"
#include "simlabel/corpus.hpp"
#include "simlabel/encoder.hpp"
#include "simlabel/inference.hpp"
#include "simlabel/lsm.hpp"
#include "simlabel/metrics.hpp"
#include "simlabel/pipeline.hpp"
#include "simlabel/service.hpp"
#include "simlabel/tripletgen.hpp"
