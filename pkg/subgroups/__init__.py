from subgroups.kmeans_subgroups import elbow_k, kmeans_subgroups, wcss_curve
from subgroups.similarity import SimilarityMatrix, build_similarity
