"""
Laboratorio de Destilación de Trayectorias Rectas y Consistentes
================================================================

Destila un maestro de flow matching en un estudiante que genera en pocos pasos
proyectando el estado x_t directamente a un tiempo anterior s:

    G(x, t, s) = (s/t)·x + (1 − s/t)·g(x, t, s)

Comandos:
- train-teacher: entrena el maestro sobre una distribución 2D de juguete
- distill:       destila el estudiante (o un arco de referencia)
- eval:          métricas de un estudiante para cada NFE configurado
- compare:       tabla estrategia de pesos × punto de control
- export-traj:   trayectorias maestro/estudiante en CSV
- export-data:   puntos del conjunto de datos en CSV
- calibrate:     ejecución completa que mide los cocientes de calidad y los registra

Códigos de salida: 0 éxito, 1 configuración o argumentos inválidos (ConfigError),
2 fallo en ejecución (numérico, de E/S o punto de control ilegible).
"""

import argparse
import logging
import os
import sys

# Añadir el directorio src al path para importar módulos
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from system.controller import (export_dataset, export_trajectories, run_calibrate,  # noqa: E402
                               run_compare, run_distill, run_eval, run_train_teacher)
from system.teacher import SolverError, TrainingDivergedError  # noqa: E402
from utils.checkpoints import CheckpointError  # noqa: E402
from utils.config import ConfigError, load_config  # noqa: E402

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def print_header(command, config_path, out_dir):
    """Imprime el encabezado del comando."""
    print("\n" + "=" * 70)
    print(" " * 6 + "LABORATORIO DE DESTILACIÓN DE TRAYECTORIAS RECTAS Y CONSISTENTES")
    print("=" * 70)
    print(f"  • Comando:       {command}")
    print(f"  • Configuración: {config_path}")
    print(f"  • Salida:        {out_dir}")
    print("=" * 70 + "\n")


def build_parser():
    parser = argparse.ArgumentParser(
        description="Destilación de trayectorias rectas y consistentes sobre datos 2D")
    sub = parser.add_subparsers(dest='command', required=True)

    def add_command(name, help_text):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument('--config', required=True, help="Configuración JSON")
        cmd.add_argument('--out', default=None,
                         help="Directorio de salida (por defecto output_dir de la configuración)")
        cmd.add_argument('--quiet', action='store_true', help="Sin barras de progreso")
        return cmd

    add_command('train-teacher', "Entrena el maestro de flow matching")

    distill = add_command('distill', "Destila el estudiante")
    distill.add_argument('--teacher', required=True, help="Punto de control del maestro")

    evaluate = add_command('eval', "Evalúa un estudiante")
    evaluate.add_argument('--checkpoint', required=True, help="Punto de control del estudiante")
    evaluate.add_argument('--teacher', default=None, help="Punto de control del maestro")

    compare = add_command('compare', "Compara estrategias de pesos")
    compare.add_argument('--teacher', required=True, help="Punto de control del maestro")

    export = add_command('export-traj', "Exporta trayectorias a CSV")
    export.add_argument('--checkpoint', required=True, help="Punto de control del estudiante")
    export.add_argument('--teacher', default=None, help="Punto de control del maestro")
    export.add_argument('--n', type=int, default=None, help="Trayectorias por modelo")
    export.add_argument('--steps', type=int, default=None, help="Pasos de la malla de trazado")
    export.add_argument('--plot', action='store_true', help="Guardar también un PNG")

    data = add_command('export-data', "Exporta puntos del conjunto de datos a CSV")
    data.add_argument('--n', type=int, default=None, help="Número de puntos")

    calibrate = add_command('calibrate', "Mide y registra los cocientes de calidad")
    calibrate.add_argument('--record', default=None,
                           help="Registro JSON de calibración a actualizar (cotas congeladas)")
    return parser


def dispatch(args, config, out_dir):
    progress = not args.quiet
    if args.command == 'train-teacher':
        return run_train_teacher(config, out_dir, progress=progress)
    if args.command == 'distill':
        return run_distill(config, args.teacher, out_dir, progress=progress)
    if args.command == 'eval':
        return run_eval(config, args.checkpoint, out_dir, teacher_path=args.teacher)
    if args.command == 'compare':
        return run_compare(config, args.teacher, out_dir, progress=progress)
    if args.command == 'export-data':
        return export_dataset(config, out_dir, n=args.n)
    if args.command == 'calibrate':
        return run_calibrate(config, out_dir, record_path=args.record, progress=progress)
    return export_trajectories(config, args.checkpoint, out_dir, teacher_path=args.teacher,
                               n=args.n, steps=args.steps, plot=args.plot)


def main(argv=None):
    """
    Punto de entrada de la línea de comandos.

    Returns:
        int: Código de salida
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format='%(levelname)s %(name)s: %(message)s')

    try:
        config = load_config(args.config)
        out_dir = args.out or config.output_dir
        print_header(args.command, args.config, out_dir)
        dispatch(args, config, out_dir)
    except ConfigError as e:
        print(f"\n✗ Error de validación: {e}")
        return EXIT_VALIDATION
    except (TrainingDivergedError, SolverError, FloatingPointError) as e:
        print(f"\n✗ Fallo numérico: {e}")
        return EXIT_RUNTIME
    except CheckpointError as e:
        print(f"\n✗ Punto de control inválido: {e}")
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as e:
        print(f"\n✗ Error en ejecución: {e}")
        return EXIT_RUNTIME

    print("\n✓ Comando completado: " + args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
