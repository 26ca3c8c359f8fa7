#pragma once

#include "ufcl/clustering.hpp"
#include "ufcl/common.hpp"
#include "ufcl/config.hpp"
#include "ufcl/encoder.hpp"
#include "ufcl/evaluation.hpp"
#include "ufcl/io.hpp"
#include "ufcl/membank.hpp"
#include "ufcl/neighbors.hpp"
#include "ufcl/pipeline.hpp"
#include "ufcl/synth.hpp"
