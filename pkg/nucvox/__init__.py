"""Non-uniform cylindrical voxelization of LiDAR point clouds."""
