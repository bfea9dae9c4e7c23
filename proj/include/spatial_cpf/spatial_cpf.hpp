#pragma once

#include "spatial_cpf/cpf.hpp"
#include "spatial_cpf/error.hpp"
#include "spatial_cpf/geodesy.hpp"
#include "spatial_cpf/graph.hpp"
#include "spatial_cpf/iforest.hpp"
#include "spatial_cpf/ingest.hpp"
#include "spatial_cpf/io.hpp"
#include "spatial_cpf/knn.hpp"
#include "spatial_cpf/matrix.hpp"
#include "spatial_cpf/metrics.hpp"
#include "spatial_cpf/pipeline.hpp"
#include "spatial_cpf/stats.hpp"
