"""
Funciones de visualización de las ejecuciones.
Genera gráficas de muestras generadas y de trayectorias maestro/estudiante.
"""
import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, save_path):
    plt.tight_layout()
    fig.savefig(save_path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    print(f"✓ Gráfica guardada en: {save_path}")
    return save_path


def plot_samples(reference, generated, save_path, title=None):
    """
    Nube de puntos de los datos de referencia frente a cada conjunto generado.

    Args:
        reference (np.ndarray): Puntos de referencia (n, 2)
        generated (dict): etiqueta -> puntos generados (n, 2), un panel por etiqueta
        save_path (str): Fichero PNG de salida
        title (str, optional): Título de la figura
    """
    panels = len(generated)
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 5), squeeze=False)
    fig.suptitle(title or 'Muestras generadas frente a los datos', fontsize=14, fontweight='bold')

    for ax, (label, points) in zip(axes[0], generated.items()):
        ax.scatter(reference[:, 0], reference[:, 1], s=2, alpha=0.3, color='gray', label='Datos')
        ax.scatter(points[:, 0], points[:, 1], s=2, alpha=0.6, color='tab:blue', label=label)
        ax.set_title(label, fontsize=12, fontweight='bold')
        ax.set_aspect('equal')
        ax.legend(loc='upper right', fontsize=9, markerscale=4)
        ax.grid(True, alpha=0.3)

    return _finish(fig, save_path)


def plot_trajectories(traces, save_path, max_paths=16):
    """
    Trayectorias ruido → datos de cada modelo en paneles contiguos.

    Args:
        traces (dict): etiqueta -> lista [(t, x (lote, 2))] de ``trace_trajectory``
        save_path (str): Fichero PNG de salida
        max_paths (int): Máximo de trayectorias dibujadas por panel
    """
    panels = len(traces)
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 5), squeeze=False)
    fig.suptitle('Trayectorias de destilación', fontsize=14, fontweight='bold')

    for ax, (label, states) in zip(axes[0], traces.items()):
        path = np.stack([x for _, x in states], axis=1)
        for item in path[:max_paths]:
            ax.plot(item[:, 0], item[:, 1], linewidth=1, alpha=0.8)
            ax.scatter(item[0, 0], item[0, 1], s=10, color='black')
            ax.scatter(item[-1, 0], item[-1, 1], s=10, color='tab:red')
        ax.set_title(f"{label} ({len(states) - 1} pasos)", fontsize=12, fontweight='bold')
        ax.set_aspect('equal')
        ax.grid(True, alpha=0.3)

    return _finish(fig, save_path)
